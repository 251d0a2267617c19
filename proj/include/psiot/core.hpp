#pragma once

// Shared vocabulary for the orchestration framework: QoS levels, BAM traffic
// classes, identifiers, and the static backbone topology.
//
// Units: bandwidth is bytes/second, sizes are bytes, time is a tick index
// plus a tick duration in microseconds. "1 MB/s" means 1,000,000 B/s.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace psiot {

using Bytes = std::int64_t;
using Bandwidth = std::int64_t;  // bytes per second
using Tick = std::int64_t;
using Duration = std::chrono::microseconds;

inline constexpr int kNumClasses = 3;

/// Time-sensitivity level requested by a subscriber. Higher is more urgent.
enum class QosClass : std::uint8_t {
  Insensitive = 0,
  Sensitive = 1,
  Priority = 2,
};

inline constexpr std::array<QosClass, kNumClasses> kAllQos = {
    QosClass::Insensitive, QosClass::Sensitive, QosClass::Priority};

constexpr int level(QosClass q) { return static_cast<int>(q); }

inline QosClass qos_from_level(int lvl) {
  if (lvl < 0 || lvl >= kNumClasses) {
    throw std::out_of_range("QoS level must be 0, 1 or 2, got " + std::to_string(lvl));
  }
  return static_cast<QosClass>(lvl);
}

inline std::string_view to_string(QosClass q) {
  switch (q) {
    case QosClass::Insensitive: return "insensitive";
    case QosClass::Sensitive: return "sensitive";
    case QosClass::Priority: return "priority";
  }
  return "?";
}

/// BAM-side class. Index 0 is the most protected class.
class TrafficClass {
 public:
  constexpr TrafficClass() = default;
  explicit TrafficClass(int index) : index_(index) {
    if (index < 0 || index >= kNumClasses) {
      throw std::out_of_range("traffic class index must be 0, 1 or 2, got " +
                              std::to_string(index));
    }
  }
  constexpr int index() const { return index_; }
  friend constexpr auto operator<=>(TrafficClass, TrafficClass) = default;

 private:
  int index_ = 0;
};

inline TrafficClass qos_to_tc(QosClass q) { return TrafficClass(kNumClasses - 1 - level(q)); }
inline QosClass tc_to_qos(TrafficClass tc) { return qos_from_level(kNumClasses - 1 - tc.index()); }

/// Per-class triple indexed by QoS level (not by traffic class).
template <typename T>
using PerClass = std::array<T, kNumClasses>;

/// Thrown for precondition violations and domain errors raised by
/// operations (unknown topic, duplicate subscription, unknown LSP, ...).
class Error : public std::runtime_error {
 public:
  enum class Code {
    UnknownTopic,
    DuplicateSubscription,
    UnknownSubscription,
    DuplicateLspId,
    UnknownLsp,
    UnknownLink,
    InvalidArgument,
    NoAggregators,
  };

  Error(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

// ---------------------------------------------------------------------------
// Topology

enum class NodeKind { Aggregator, Consumer, Orchestrator, Switch, TrafficGen };

inline std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Aggregator: return "aggregator";
    case NodeKind::Consumer: return "consumer";
    case NodeKind::Orchestrator: return "orchestrator";
    case NodeKind::Switch: return "switch";
    case NodeKind::TrafficGen: return "traffic_gen";
  }
  return "?";
}

inline std::optional<NodeKind> node_kind_from_string(std::string_view s) {
  for (NodeKind k : {NodeKind::Aggregator, NodeKind::Consumer, NodeKind::Orchestrator,
                     NodeKind::Switch, NodeKind::TrafficGen}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

struct Node {
  std::string id;
  NodeKind kind = NodeKind::Switch;
  friend bool operator==(const Node&, const Node&) = default;
};

struct Link {
  std::string id;
  std::string a;
  std::string b;
  Bandwidth capacity = 0;
  friend bool operator==(const Link&, const Link&) = default;
};

struct Route {
  std::string src;
  std::string dst;
  std::vector<std::string> links;
  friend bool operator==(const Route&, const Route&) = default;
};

struct Topology {
  std::vector<Node> nodes;
  std::vector<Link> links;
  std::vector<Route> routes;

  const Node* find_node(std::string_view id) const {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
    return it == nodes.end() ? nullptr : &*it;
  }
  const Link* find_link(std::string_view id) const {
    auto it = std::find_if(links.begin(), links.end(), [&](const Link& l) { return l.id == id; });
    return it == links.end() ? nullptr : &*it;
  }
  const Route* find_route(std::string_view src, std::string_view dst) const {
    auto it = std::find_if(routes.begin(), routes.end(),
                           [&](const Route& r) { return r.src == src && r.dst == dst; });
    return it == routes.end() ? nullptr : &*it;
  }
  std::vector<std::string> ids_of(NodeKind kind) const {
    std::vector<std::string> out;
    for (const auto& n : nodes) {
      if (n.kind == kind) out.push_back(n.id);
    }
    return out;
  }

  friend bool operator==(const Topology&, const Topology&) = default;
};

struct ValidationError {
  enum class Kind {
    MissingRoute,
    DanglingLink,
    DisconnectedRoute,
    NonPositiveCapacity,
    DuplicateId,
    InvalidField,
    UnknownReference,
    Syntax,
  };
  Kind kind;
  std::string where;  // path of the offending element, e.g. "topology.links[3]"
  std::string message;
  friend bool operator==(const ValidationError&, const ValidationError&) = default;
};

inline std::string_view to_string(ValidationError::Kind k) {
  using K = ValidationError::Kind;
  switch (k) {
    case K::MissingRoute: return "MissingRoute";
    case K::DanglingLink: return "DanglingLink";
    case K::DisconnectedRoute: return "DisconnectedRoute";
    case K::NonPositiveCapacity: return "NonPositiveCapacity";
    case K::DuplicateId: return "DuplicateId";
    case K::InvalidField: return "InvalidField";
    case K::UnknownReference: return "UnknownReference";
    case K::Syntax: return "Syntax";
  }
  return "?";
}

using ValidationErrors = std::vector<ValidationError>;

inline std::string describe(const ValidationError& e) {
  return std::string(to_string(e.kind)) + " at " + e.where + ": " + e.message;
}

/// A topology whose invariants have been checked. Only validate_topology
/// constructs one.
class ValidatedTopology {
 public:
  const Topology& topology() const { return topo_; }
  friend bool operator==(const ValidatedTopology&, const ValidatedTopology&) = default;

 private:
  explicit ValidatedTopology(Topology t) : topo_(std::move(t)) {}
  friend std::variant<ValidatedTopology, ValidationErrors> validate_topology(Topology t);
  Topology topo_;
};

namespace detail {

inline void check_route(const Topology& t, const Route& r, const std::string& where,
                        ValidationErrors& errs) {
  if (!t.find_node(r.src) || !t.find_node(r.dst)) {
    errs.push_back({ValidationError::Kind::UnknownReference, where,
                    "route endpoint " + (!t.find_node(r.src) ? r.src : r.dst) + " is not a node"});
    return;
  }
  if (r.links.empty()) {
    errs.push_back({ValidationError::Kind::DisconnectedRoute, where, "route has no links"});
    return;
  }
  bool dangling = false;
  for (std::size_t i = 0; i < r.links.size(); ++i) {
    if (!t.find_link(r.links[i])) {
      errs.push_back({ValidationError::Kind::DanglingLink, where + ".links[" + std::to_string(i) + "]",
                      "route names undeclared link " + r.links[i]});
      dangling = true;
    }
  }
  if (dangling) return;
  std::string at = r.src;
  std::set<std::string> visited{at};
  for (const auto& lid : r.links) {
    const Link* l = t.find_link(lid);
    if (l->a == at) {
      at = l->b;
    } else if (l->b == at) {
      at = l->a;
    } else {
      errs.push_back({ValidationError::Kind::DisconnectedRoute, where,
                      "link " + lid + " does not touch " + at});
      return;
    }
    if (!visited.insert(at).second) {
      errs.push_back({ValidationError::Kind::DisconnectedRoute, where, "route revisits node " + at});
      return;
    }
  }
  if (at != r.dst) {
    errs.push_back({ValidationError::Kind::DisconnectedRoute, where,
                    "route ends at " + at + " instead of " + r.dst});
  }
}

}  // namespace detail

/// Checks every topology invariant and reports all violations, not just the
/// first. Every aggregator/consumer pair must have a route.
inline std::variant<ValidatedTopology, ValidationErrors> validate_topology(Topology t) {
  ValidationErrors errs;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    if (t.nodes[i].id.empty()) {
      errs.push_back({ValidationError::Kind::InvalidField, "topology.nodes[" + std::to_string(i) + "]",
                      "node id is empty"});
    } else if (!ids.insert(t.nodes[i].id).second) {
      errs.push_back({ValidationError::Kind::DuplicateId, "topology.nodes[" + std::to_string(i) + "]",
                      "duplicate id " + t.nodes[i].id});
    }
  }
  for (std::size_t i = 0; i < t.links.size(); ++i) {
    const auto& l = t.links[i];
    const std::string where = "topology.links[" + std::to_string(i) + "]";
    if (l.id.empty()) {
      errs.push_back({ValidationError::Kind::InvalidField, where, "link id is empty"});
    } else if (!ids.insert(l.id).second) {
      errs.push_back({ValidationError::Kind::DuplicateId, where, "duplicate id " + l.id});
    }
    if (l.capacity <= 0) {
      errs.push_back({ValidationError::Kind::NonPositiveCapacity, where,
                      "capacity must be > 0, got " + std::to_string(l.capacity)});
    }
    for (const auto& end : {l.a, l.b}) {
      if (!t.find_node(end)) {
        errs.push_back({ValidationError::Kind::DanglingLink, where,
                        "link endpoint " + end + " is not a declared node"});
      }
    }
  }
  std::set<std::pair<std::string, std::string>> seen_routes;
  for (std::size_t i = 0; i < t.routes.size(); ++i) {
    const std::string where = "topology.routes[" + std::to_string(i) + "]";
    if (!seen_routes.insert({t.routes[i].src, t.routes[i].dst}).second) {
      errs.push_back({ValidationError::Kind::DuplicateId, where,
                      "duplicate route " + t.routes[i].src + "->" + t.routes[i].dst});
    }
    detail::check_route(t, t.routes[i], where, errs);
  }
  for (const auto& agg : t.ids_of(NodeKind::Aggregator)) {
    for (const auto& con : t.ids_of(NodeKind::Consumer)) {
      if (!t.find_route(agg, con)) {
        errs.push_back({ValidationError::Kind::MissingRoute, "topology.routes",
                        "no route from " + agg + " to " + con});
      }
    }
  }
  if (!errs.empty()) return errs;
  return ValidatedTopology(std::move(t));
}

}  // namespace psiot
