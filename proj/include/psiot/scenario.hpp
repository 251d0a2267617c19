#pragma once

// Declarative experiment description and its validation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "psiot/aggregator.hpp"
#include "psiot/bam.hpp"
#include "psiot/core.hpp"
#include "psiot/orchestrator.hpp"

namespace psiot::sim {

struct TopicConfig {
  std::string name;
  Bandwidth rate = 0;
  Bytes msg_size = 500;
  Bytes phase = 0;      // initial carry, bytes
  double jitter = 0.0;  // +/- fraction of the per-tick budget, seeded
  friend bool operator==(const TopicConfig&, const TopicConfig&) = default;
};

struct AggregatorSpec {
  std::string id;
  std::vector<TopicConfig> topics;
  agg::BufferConfig buffer;
  std::optional<PerClass<Bandwidth>> fallback_rates;
  friend bool operator==(const AggregatorSpec&, const AggregatorSpec&) = default;
};

struct CrossTrafficSpec {
  enum class Profile { Cbr, OnOff };
  std::string src;
  std::string dst;
  Bandwidth rate = 0;
  Profile profile = Profile::Cbr;
  int on_ticks = 0;
  int off_ticks = 0;
  friend bool operator==(const CrossTrafficSpec&, const CrossTrafficSpec&) = default;
};

struct BamSpec {
  bool devolution = false;  // reserved; only `false` is accepted
  std::map<std::string, bam::BandwidthConstraints> links;
  friend bool operator==(const BamSpec&, const BamSpec&) = default;
};

struct ScenarioEvent {
  enum class Kind { StartHosts, Subscribe, Unsubscribe, OrchestratorDown, OrchestratorUp, End };
  Tick at = 0;
  Kind kind = Kind::End;
  std::string consumer;
  std::string aggregator;
  std::string topic;
  QosClass qos = QosClass::Insensitive;
  std::string marker;  // optional timeline label
  friend bool operator==(const ScenarioEvent&, const ScenarioEvent&) = default;
};

inline std::string_view to_string(ScenarioEvent::Kind k) {
  using K = ScenarioEvent::Kind;
  switch (k) {
    case K::StartHosts: return "start_hosts";
    case K::Subscribe: return "subscribe";
    case K::Unsubscribe: return "unsubscribe";
    case K::OrchestratorDown: return "orchestrator_down";
    case K::OrchestratorUp: return "orchestrator_up";
    case K::End: return "end";
  }
  return "?";
}

inline std::optional<ScenarioEvent::Kind> event_kind_from_string(std::string_view s) {
  using K = ScenarioEvent::Kind;
  for (K k : {K::StartHosts, K::Subscribe, K::Unsubscribe, K::OrchestratorDown,
              K::OrchestratorUp, K::End}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

struct SimSettings {
  Duration tick{100'000};
  std::uint64_t seed = 1;
  int metadata_interval_ticks = 10;
  int ingest_window_ticks = 10;
  friend bool operator==(const SimSettings&, const SimSettings&) = default;
};

struct Scenario {
  std::string name;
  SimSettings sim;
  Topology topology;
  BamSpec bam;
  orch::OrchestratorConfig orchestrator;
  std::vector<AggregatorSpec> aggregators;
  std::vector<CrossTrafficSpec> cross_traffic;
  std::vector<ScenarioEvent> events;

  const AggregatorSpec* find_aggregator(std::string_view id) const {
    auto it = std::find_if(aggregators.begin(), aggregators.end(),
                           [&](const AggregatorSpec& a) { return a.id == id; });
    return it == aggregators.end() ? nullptr : &*it;
  }

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// BAM constraints proportional to the class split, in traffic-class order,
/// rounded by largest remainder so they sum to the capacity exactly.
inline bam::BandwidthConstraints proportional_constraints(Bandwidth capacity,
                                                          const PerClass<double>& split,
                                                          bam::Model model = bam::Model::Atcs) {
  bam::BandwidthConstraints c;
  c.model = model;
  const double total = split[0] + split[1] + split[2];
  std::array<double, kNumClasses> exact{};
  Bandwidth assigned = 0;
  for (int tc = 0; tc < kNumClasses; ++tc) {
    const int q = level(tc_to_qos(TrafficClass(tc)));
    exact[tc] = total > 0 ? static_cast<double>(capacity) * split[q] / total : 0.0;
    c.bc[tc] = static_cast<Bandwidth>(std::floor(exact[tc]));
    assigned += c.bc[tc];
  }
  std::array<int, kNumClasses> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return exact[a] - std::floor(exact[a]) > exact[b] - std::floor(exact[b]);
  });
  for (int i = 0; assigned < capacity; i = (i + 1) % kNumClasses) {
    ++c.bc[order[i]];
    ++assigned;
  }
  return c;
}

/// Fills every omitted per-link BAM configuration with the proportional
/// ATCS default.
inline void apply_defaults(Scenario& s) {
  for (const auto& l : s.topology.links) {
    if (!s.bam.links.contains(l.id)) {
      s.bam.links[l.id] = proportional_constraints(l.capacity, s.orchestrator.class_split);
    }
  }
}

/// The links an aggregator's channels are reserved on: the longest common
/// prefix of its routes to every consumer.
inline std::vector<std::string> channel_path(const Topology& t, const std::string& aggregator) {
  std::optional<std::vector<std::string>> prefix;
  for (const auto& con : t.ids_of(NodeKind::Consumer)) {
    const Route* r = t.find_route(aggregator, con);
    if (!r) return {};
    if (!prefix) {
      prefix = r->links;
      continue;
    }
    std::size_t n = 0;
    while (n < prefix->size() && n < r->links.size() && (*prefix)[n] == r->links[n]) ++n;
    prefix->resize(n);
  }
  return prefix.value_or(std::vector<std::string>{});
}

inline std::map<std::string, std::vector<std::string>> channel_paths(const Scenario& s) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& a : s.aggregators) out[a.id] = channel_path(s.topology, a.id);
  return out;
}

/// Checks the whole scenario and lists every problem found.
inline ValidationErrors validate_scenario(const Scenario& s) {
  using K = ValidationError::Kind;
  ValidationErrors errs;
  auto add = [&](K k, std::string where, std::string msg) {
    errs.push_back({k, std::move(where), std::move(msg)});
  };

  if (s.sim.tick.count() <= 0) add(K::InvalidField, "sim.tick_us", "tick must be positive");
  if (s.sim.metadata_interval_ticks <= 0) {
    add(K::InvalidField, "sim.metadata_interval_ticks", "must be positive");
  }
  if (s.sim.ingest_window_ticks <= 0) add(K::InvalidField, "sim.ingest_window_ticks", "must be positive");

  const auto topo = validate_topology(s.topology);
  if (const auto* te = std::get_if<ValidationErrors>(&topo)) {
    errs.insert(errs.end(), te->begin(), te->end());
  }
  const auto& t = s.topology;
  if (t.ids_of(NodeKind::Consumer).empty()) add(K::InvalidField, "topology.nodes", "no consumer declared");

  // Aggregators must match the aggregator nodes one to one.
  std::set<std::string> agg_nodes;
  for (const auto& id : t.ids_of(NodeKind::Aggregator)) agg_nodes.insert(id);
  std::set<std::string> agg_specs;
  for (std::size_t i = 0; i < s.aggregators.size(); ++i) {
    const auto& a = s.aggregators[i];
    const std::string where = "aggregators[" + std::to_string(i) + "]";
    if (!agg_specs.insert(a.id).second) add(K::DuplicateId, where, "duplicate aggregator " + a.id);
    if (!agg_nodes.contains(a.id)) {
      add(K::UnknownReference, where + ".id", a.id + " is not an aggregator node");
    }
    std::set<std::string> names;
    for (std::size_t j = 0; j < a.topics.size(); ++j) {
      const auto& tp = a.topics[j];
      const std::string tw = where + ".topics[" + std::to_string(j) + "]";
      if (tp.name.empty()) add(K::InvalidField, tw + ".name", "topic name is empty");
      if (!names.insert(tp.name).second) add(K::DuplicateId, tw + ".name", "duplicate topic " + tp.name);
      if (tp.rate < 0) add(K::InvalidField, tw + ".rate", "rate must be >= 0");
      if (tp.msg_size <= 0) add(K::InvalidField, tw + ".msg_size", "msg_size must be > 0");
      if (tp.phase < 0) add(K::InvalidField, tw + ".phase", "phase must be >= 0");
      if (!(tp.jitter >= 0.0 && tp.jitter < 1.0)) add(K::InvalidField, tw + ".jitter", "jitter must be in [0,1)");
    }
    if (a.buffer.capacity_per_class <= 0) {
      add(K::InvalidField, where + ".buffer.capacity_per_class", "capacity must be > 0");
    }
    if (a.buffer.capacity_override) {
      for (Bytes b : *a.buffer.capacity_override) {
        if (b <= 0) add(K::InvalidField, where + ".buffer.capacity_override", "capacity must be > 0");
      }
    }
    if (a.fallback_rates) {
      for (Bandwidth r : *a.fallback_rates) {
        if (r < 0) add(K::InvalidField, where + ".fallback_rates", "rates must be >= 0");
      }
    }
    if (channel_path(t, a.id).empty() && !t.ids_of(NodeKind::Consumer).empty() &&
        agg_nodes.contains(a.id)) {
      add(K::MissingRoute, where, "routes from " + a.id + " to the consumers share no link");
    }
  }
  for (const auto& id : agg_nodes) {
    if (!agg_specs.contains(id)) add(K::UnknownReference, "aggregators", "aggregator node " + id + " has no spec");
  }

  // Orchestrator.
  const auto& oc = s.orchestrator;
  if (oc.total_budget <= 0) add(K::InvalidField, "orchestrator.total_budget", "budget must be > 0");
  double split_sum = 0;
  for (double f : oc.class_split) {
    if (!(f >= 0.0)) add(K::InvalidField, "orchestrator.class_split", "fractions must be >= 0");
    split_sum += f;
  }
  if (split_sum < 1.0 - 1e-9) {
    add(K::InvalidField, "orchestrator.class_split",
        "fractions sum to " + std::to_string(split_sum) + ", below 1.0");
  }
  if (!(oc.buffer_threshold > 0.0 && oc.buffer_threshold <= 1.0)) {
    add(K::InvalidField, "orchestrator.buffer_threshold", "threshold must be in (0,1]");
  }
  if (oc.recompute.kind == orch::RecomputePolicy::Kind::Interval && oc.recompute.interval_ticks <= 0) {
    add(K::InvalidField, "orchestrator.recompute.interval_ticks", "interval must be positive");
  }
  // The base rates of all aggregators must fit on every shared channel link.
  Bandwidth min_shared = -1;
  std::map<std::string, int> crossing;
  for (const auto& a : s.aggregators) {
    for (const auto& lid : channel_path(t, a.id)) ++crossing[lid];
  }
  for (const auto& [lid, n] : crossing) {
    const Link* l = t.find_link(lid);
    if (l && n == static_cast<int>(s.aggregators.size())) {
      min_shared = min_shared < 0 ? l->capacity : std::min(min_shared, l->capacity);
    }
  }
  if (min_shared > 0 && oc.total_budget > 0 && orch::base_total(oc) > min_shared) {
    add(K::InvalidField, "orchestrator.class_split",
        "budget x split total (" + std::to_string(orch::base_total(oc)) +
            " B/s) exceeds the shared link capacity " + std::to_string(min_shared));
  }

  // BAM.
  if (s.bam.devolution) add(K::InvalidField, "bam.devolution", "devolution is not supported");
  for (const auto& [lid, c] : s.bam.links) {
    const Link* l = t.find_link(lid);
    if (!l) {
      add(K::UnknownReference, "bam.links." + lid, "no such link");
      continue;
    }
    if (auto e = bam::check_constraints(l->capacity, c)) add(K::InvalidField, "bam.links." + lid, *e);
  }
  for (const auto& l : t.links) {
    if (!s.bam.links.contains(l.id)) add(K::InvalidField, "bam.links", "no constraints for link " + l.id);
  }

  // Cross traffic.
  for (std::size_t i = 0; i < s.cross_traffic.size(); ++i) {
    const auto& x = s.cross_traffic[i];
    const std::string where = "cross_traffic[" + std::to_string(i) + "]";
    if (!t.find_route(x.src, x.dst)) add(K::MissingRoute, where, "no route from " + x.src + " to " + x.dst);
    if (x.rate < 0) add(K::InvalidField, where + ".rate", "rate must be >= 0");
    if (x.profile == CrossTrafficSpec::Profile::OnOff && (x.on_ticks <= 0 || x.off_ticks < 0)) {
      add(K::InvalidField, where + ".profile", "on/off periods must be positive");
    }
  }

  // Events, replayed in execution order.
  using EK = ScenarioEvent::Kind;
  std::vector<std::size_t> order(s.events.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.events[a].at < s.events[b].at; });
  int ends = 0;
  Tick end_at = 0;
  for (const auto& e : s.events) {
    if (e.kind == EK::End) {
      ++ends;
      end_at = e.at;
    }
  }
  if (ends != 1) add(K::InvalidField, "events", "exactly one end event is required");
  bool started = false;
  std::set<std::tuple<std::string, std::string, std::string>> live;
  for (std::size_t i : order) {
    const auto& e = s.events[i];
    const std::string where = "events[" + std::to_string(i) + "]";
    if (e.at < 0) add(K::InvalidField, where + ".at", "tick must be >= 0");
    if (ends == 1 && e.kind != EK::End && e.at >= end_at) {
      add(K::InvalidField, where + ".at", "event at or after the end event");
    }
    switch (e.kind) {
      case EK::StartHosts:
        started = true;
        break;
      case EK::Subscribe:
      case EK::Unsubscribe: {
        if (!started) add(K::InvalidField, where, "subscription change before start_hosts");
        const Node* c = t.find_node(e.consumer);
        if (!c || c->kind != NodeKind::Consumer) {
          add(K::UnknownReference, where + ".consumer", e.consumer + " is not a consumer");
        }
        const AggregatorSpec* a = s.find_aggregator(e.aggregator);
        if (!a) {
          add(K::UnknownReference, where + ".aggregator", e.aggregator + " is not an aggregator");
        } else if (std::none_of(a->topics.begin(), a->topics.end(),
                                [&](const TopicConfig& tp) { return tp.name == e.topic; })) {
          add(K::UnknownReference, where + ".topic", e.aggregator + " has no topic " + e.topic);
        }
        const auto key = std::tuple{e.consumer, e.aggregator, e.topic};
        if (e.kind == EK::Subscribe && !live.insert(key).second) {
          add(K::InvalidField, where, "duplicate subscription");
        } else if (e.kind == EK::Unsubscribe && live.erase(key) == 0) {
          add(K::InvalidField, where, "unsubscribe without subscription");
        }
        break;
      }
      case EK::OrchestratorDown:
      case EK::OrchestratorUp:
        if (!started) add(K::InvalidField, where, "orchestrator event before start_hosts");
        break;
      case EK::End:
        break;
    }
  }
  return errs;
}

}  // namespace psiot::sim
