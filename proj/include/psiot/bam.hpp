#pragma once

// Bandwidth allocation models: per-link admission control with LSP lifecycle.
//
// Three models are supported over three traffic classes (index 0 is the
// highest priority):
//
//   MAM   each class is capped by its own constraint; no sharing.
//   RDM   nested caps: for every k, the classes k..2 together may use at
//         most bc[k] + ... + bc[2]. Higher classes may use idle lower share.
//   ATCS  AllocTC-Sharing. Every class owns a pool of bc[i] bytes/s. An LSP
//         may draw from several pools ("loans"). A request is served from
//           1. its own pool,
//           2. lower-priority pools tc+1 .. 2, ascending,
//           3. higher-priority pools tc-1 .. 0, descending,
//           4. by preempting LSPs of other classes that hold loans in its
//              own pool: lowest-priority borrower first, most recently
//              admitted first within a class, and never more of them than
//              the shortfall requires. Victims free all their draws and the
//              request is then placed by steps 1-3.
//         Released loans stay where they are; there is no devolution.
//
// Admission is all-or-nothing: a denied request leaves the link untouched.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <stdexcept>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "psiot/core.hpp"

namespace psiot::bam {

enum class Model { Mam, Rdm, Atcs };

inline std::string_view to_string(Model m) {
  switch (m) {
    case Model::Mam: return "mam";
    case Model::Rdm: return "rdm";
    case Model::Atcs: return "atcs";
  }
  return "?";
}

inline std::optional<Model> model_from_string(std::string_view s) {
  for (Model m : {Model::Mam, Model::Rdm, Model::Atcs}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

/// Amounts indexed by traffic class (pool) index.
using PoolArray = std::array<Bandwidth, kNumClasses>;

struct BandwidthConstraints {
  Model model = Model::Atcs;
  PoolArray bc{};
  friend bool operator==(const BandwidthConstraints&, const BandwidthConstraints&) = default;
};

/// Returns a description of the problem, or nothing if the constraints are
/// usable on a link of the given capacity.
inline std::optional<std::string> check_constraints(Bandwidth capacity,
                                                    const BandwidthConstraints& c) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (c.bc[i] < 0) return "bc[" + std::to_string(i) + "] is negative";
  }
  const Bandwidth sum = c.bc[0] + c.bc[1] + c.bc[2];
  if (c.model == Model::Mam) {
    for (int i = 0; i < kNumClasses; ++i) {
      if (c.bc[i] > capacity) return "bc[" + std::to_string(i) + "] exceeds link capacity";
    }
    if (sum < capacity) return "MAM constraints must sum to at least the link capacity";
  } else if (sum != capacity) {
    return std::string(to_string(c.model)) + " constraints must sum to the link capacity (" +
           std::to_string(sum) + " != " + std::to_string(capacity) + ")";
  }
  return std::nullopt;
}

struct LspId {
  std::uint64_t value = 0;
  friend constexpr auto operator<=>(LspId, LspId) = default;
};

struct Lsp {
  LspId id;
  TrafficClass tc;
  Bandwidth bw = 0;
  PoolArray draw{};  // per-pool decomposition on this link, sums to bw
  Tick created_at = 0;
  std::uint64_t admit_seq = 0;  // per-link admission order
  friend bool operator==(const Lsp&, const Lsp&) = default;
};

class LinkState;

enum class Outcome { Granted, GrantedWithPreemptions, Denied };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Granted: return "granted";
    case Outcome::GrantedWithPreemptions: return "granted_with_preemptions";
    case Outcome::Denied: return "denied";
  }
  return "?";
}

struct Decision {
  Outcome outcome = Outcome::Denied;
  std::vector<LspId> preempted;
  PoolArray draw{};                     // draw of the new LSP (admit only)
  std::optional<std::string> failed_link;  // first failing link (allocate_path only)

  bool granted() const { return outcome != Outcome::Denied; }
};

struct Violation {
  enum class Kind {
    CapacityExceeded,
    ClassCapExceeded,   // MAM
    NestedCapExceeded,  // RDM
    PoolOverflow,       // ATCS
    DrawMismatch,       // sum of draw != bw
    ForeignDraw,        // MAM/RDM LSP drawing outside its own class
    NonPositiveBandwidth,
    DuplicateLsp,
  };
  Kind kind;
  int index = -1;  // class / pool index where relevant
  std::optional<LspId> lsp;
  friend bool operator==(const Violation&, const Violation&) = default;
};

class LinkState {
 public:
  LinkState() = default;
  LinkState(std::string id, Bandwidth capacity, BandwidthConstraints constraints)
      : id_(std::move(id)), capacity_(capacity), constraints_(constraints) {}

  const std::string& id() const { return id_; }
  Bandwidth capacity() const { return capacity_; }
  const BandwidthConstraints& constraints() const { return constraints_; }
  Model model() const { return constraints_.model; }
  /// Active LSPs in admission order.
  const std::vector<Lsp>& lsps() const { return lsps_; }

  const Lsp* find(LspId id) const {
    auto it = std::find_if(lsps_.begin(), lsps_.end(), [&](const Lsp& l) { return l.id == id; });
    return it == lsps_.end() ? nullptr : &*it;
  }

  Bandwidth total() const {
    Bandwidth s = 0;
    for (const auto& l : lsps_) s += l.bw;
    return s;
  }
  /// Sum of bw of LSPs belonging to class tc.
  Bandwidth class_usage(int tc) const {
    Bandwidth s = 0;
    for (const auto& l : lsps_) {
      if (l.tc.index() == tc) s += l.bw;
    }
    return s;
  }
  /// Sum of draws on pool p (ATCS accounting).
  Bandwidth pool_usage(int p) const {
    Bandwidth s = 0;
    for (const auto& l : lsps_) s += l.draw[p];
    return s;
  }
  Bandwidth pool_free(int p) const { return constraints_.bc[p] - pool_usage(p); }

  /// Inserts an LSP without any admission check. Test-only escape hatch for
  /// building states that violate invariants.
  void insert_unchecked(Lsp l) {
    l.admit_seq = next_seq_++;
    lsps_.push_back(std::move(l));
  }

  friend bool operator==(const LinkState&, const LinkState&) = default;

 private:
  friend Decision admit(LinkState&, TrafficClass, Bandwidth, LspId, Tick);
  friend Bandwidth release(LinkState&, LspId);

  std::string id_;
  Bandwidth capacity_ = 0;
  BandwidthConstraints constraints_;
  std::vector<Lsp> lsps_;
  std::uint64_t next_seq_ = 0;
};

using Network = std::map<std::string, LinkState>;

/// Largest bandwidth a class-tc request could be granted right now without
/// preempting anything.
inline Bandwidth headroom(const LinkState& link, TrafficClass tc) {
  const auto& bc = link.constraints().bc;
  const int t = tc.index();
  Bandwidth room = link.capacity() - link.total();
  switch (link.model()) {
    case Model::Mam:
      room = std::min(room, bc[t] - link.class_usage(t));
      break;
    case Model::Rdm:
      for (int k = 0; k <= t; ++k) {
        Bandwidth cap = 0;
        Bandwidth used = 0;
        for (int i = k; i < kNumClasses; ++i) {
          cap += bc[i];
          used += link.class_usage(i);
        }
        room = std::min(room, cap - used);
      }
      break;
    case Model::Atcs: {
      Bandwidth free = 0;
      for (int p = 0; p < kNumClasses; ++p) free += std::max<Bandwidth>(0, link.pool_free(p));
      room = std::min(room, free);
      break;
    }
  }
  return std::max<Bandwidth>(0, room);
}

/// Requests a new LSP of class tc and bandwidth bw on a single link.
inline Decision admit(LinkState& link, TrafficClass tc, Bandwidth bw, LspId id, Tick now = 0) {
  if (bw <= 0) throw Error(Error::Code::InvalidArgument, "LSP bandwidth must be positive");
  if (link.find(id)) {
    throw Error(Error::Code::DuplicateLspId,
                "LSP " + std::to_string(id.value) + " already active on link " + link.id());
  }
  const int t = tc.index();
  Decision d;

  if (link.model() != Model::Atcs) {
    if (headroom(link, tc) < bw) return d;
    d.outcome = Outcome::Granted;
    d.draw[t] = bw;
    link.lsps_.push_back(Lsp{id, tc, bw, d.draw, now, link.next_seq_++});
    return d;
  }

  // ATCS steps 1-3: free space, own pool then lower then higher priority.
  std::array<int, kNumClasses> order{};
  int n = 0;
  order[n++] = t;
  for (int p = t + 1; p < kNumClasses; ++p) order[n++] = p;
  for (int p = t - 1; p >= 0; --p) order[n++] = p;

  auto fill = [&](const LinkState& l) {
    PoolArray draw{};
    Bandwidth need = bw;
    for (int p : order) {
      const Bandwidth take = std::min(need, std::max<Bandwidth>(0, l.pool_free(p)));
      draw[p] += take;
      need -= take;
    }
    return std::pair{draw, need};
  };
  auto [draw, shortfall] = fill(link);

  std::vector<LspId> victims;
  if (shortfall > 0) {
    // Step 4: preempt LSPs holding loans in our own pool. A victim frees
    // everything it draws, on every pool.
    std::vector<const Lsp*> borrowers;
    for (const auto& l : link.lsps_) {
      if (l.tc.index() != t && l.draw[t] > 0) borrowers.push_back(&l);
    }
    std::sort(borrowers.begin(), borrowers.end(), [](const Lsp* a, const Lsp* b) {
      if (a->tc.index() != b->tc.index()) return a->tc.index() > b->tc.index();
      return a->admit_seq > b->admit_seq;
    });
    std::vector<const Lsp*> chosen;
    Bandwidth reclaimed = 0;
    for (const Lsp* l : borrowers) {
      if (reclaimed >= shortfall) break;
      chosen.push_back(l);
      reclaimed += l->bw;
    }
    if (reclaimed < shortfall) return d;
    // Drop victims that turned out to be unnecessary, sparing the most
    // valuable ones first so the final set is inclusion-minimal.
    for (std::size_t i = chosen.size(); i-- > 0;) {
      if (reclaimed - chosen[i]->bw >= shortfall) {
        reclaimed -= chosen[i]->bw;
        chosen.erase(chosen.begin() + static_cast<std::ptrdiff_t>(i));
      }
    }
    for (const Lsp* l : chosen) victims.push_back(l->id);
    std::erase_if(link.lsps_, [&](const Lsp& l) {
      return std::find(victims.begin(), victims.end(), l.id) != victims.end();
    });
    std::tie(draw, shortfall) = fill(link);
    if (shortfall != 0) throw std::logic_error("ATCS preemption left a shortfall");
  }

  d.outcome = victims.empty() ? Outcome::Granted : Outcome::GrantedWithPreemptions;
  d.preempted = std::move(victims);
  d.draw = draw;
  link.lsps_.push_back(Lsp{id, tc, bw, draw, now, link.next_seq_++});
  return d;
}

/// Tears down an LSP and returns the bandwidth it held. Other LSPs keep
/// their draw maps.
inline Bandwidth release(LinkState& link, LspId id) {
  auto it = std::find_if(link.lsps_.begin(), link.lsps_.end(),
                         [&](const Lsp& l) { return l.id == id; });
  if (it == link.lsps_.end()) {
    throw Error(Error::Code::UnknownLsp,
                "LSP " + std::to_string(id.value) + " not active on link " + link.id());
  }
  const Bandwidth freed = it->bw;
  link.lsps_.erase(it);
  return freed;
}

/// Lists every model invariant the link currently violates.
inline std::vector<Violation> check_link(const LinkState& link) {
  using K = Violation::Kind;
  std::vector<Violation> out;
  const auto& bc = link.constraints().bc;

  std::vector<LspId> seen;
  for (const auto& l : link.lsps()) {
    if (std::find(seen.begin(), seen.end(), l.id) != seen.end()) {
      out.push_back({K::DuplicateLsp, -1, l.id});
    }
    seen.push_back(l.id);
    if (l.bw <= 0) out.push_back({K::NonPositiveBandwidth, -1, l.id});
    Bandwidth s = 0;
    for (int p = 0; p < kNumClasses; ++p) {
      s += l.draw[p];
      if (link.model() != Model::Atcs && p != l.tc.index() && l.draw[p] != 0) {
        out.push_back({K::ForeignDraw, p, l.id});
      }
    }
    if (s != l.bw) out.push_back({K::DrawMismatch, -1, l.id});
  }

  if (link.total() > link.capacity()) out.push_back({K::CapacityExceeded, -1, std::nullopt});

  switch (link.model()) {
    case Model::Mam:
      for (int c = 0; c < kNumClasses; ++c) {
        if (link.class_usage(c) > bc[c]) out.push_back({K::ClassCapExceeded, c, std::nullopt});
      }
      break;
    case Model::Rdm:
      for (int k = 0; k < kNumClasses; ++k) {
        Bandwidth cap = 0;
        Bandwidth used = 0;
        for (int i = k; i < kNumClasses; ++i) {
          cap += bc[i];
          used += link.class_usage(i);
        }
        if (used > cap) out.push_back({K::NestedCapExceeded, k, std::nullopt});
      }
      break;
    case Model::Atcs:
      for (int p = 0; p < kNumClasses; ++p) {
        if (link.pool_usage(p) > bc[p]) out.push_back({K::PoolOverflow, p, std::nullopt});
      }
      break;
  }
  return out;
}

inline std::string_view to_string(Violation::Kind k) {
  using K = Violation::Kind;
  switch (k) {
    case K::CapacityExceeded: return "CapacityExceeded";
    case K::ClassCapExceeded: return "ClassCapExceeded";
    case K::NestedCapExceeded: return "NestedCapExceeded";
    case K::PoolOverflow: return "PoolOverflow";
    case K::DrawMismatch: return "DrawMismatch";
    case K::ForeignDraw: return "ForeignDraw";
    case K::NonPositiveBandwidth: return "NonPositiveBandwidth";
    case K::DuplicateLsp: return "DuplicateLsp";
  }
  return "?";
}

inline nlohmann::json to_json(const LinkState& link) {
  nlohmann::json lsps = nlohmann::json::array();
  for (const auto& l : link.lsps()) {
    lsps.push_back({{"id", l.id.value},
                    {"tc", l.tc.index()},
                    {"bw", l.bw},
                    {"draw", l.draw},
                    {"created_at", l.created_at},
                    {"seq", l.admit_seq}});
  }
  return {{"id", link.id()},
          {"capacity", link.capacity()},
          {"model", to_string(link.model())},
          {"bc", link.constraints().bc},
          {"lsps", lsps}};
}

/// Canonical text form, used to compare states byte for byte.
inline std::string serialize(const LinkState& link) { return to_json(link).dump(); }

// ---------------------------------------------------------------------------
// Paths

/// Removes an LSP from every link of the network that carries it. Returns
/// the number of links it was removed from.
inline int release_everywhere(Network& net, LspId id) {
  int n = 0;
  for (auto& [_, link] : net) {
    if (link.find(id)) {
      release(link, id);
      ++n;
    }
  }
  return n;
}

inline Bandwidth path_headroom(const Network& net, const std::vector<std::string>& path,
                               TrafficClass tc) {
  if (path.empty()) throw Error(Error::Code::InvalidArgument, "empty path");
  Bandwidth room = -1;
  for (const auto& lid : path) {
    auto it = net.find(lid);
    if (it == net.end()) throw Error(Error::Code::UnknownLink, "unknown link " + lid);
    const Bandwidth h = headroom(it->second, tc);
    room = room < 0 ? h : std::min(room, h);
  }
  return room;
}

/// Admits an LSP on every link of the path or on none. Preempted LSPs are
/// torn down on all of their links, and reported once each.
inline Decision allocate_path(Network& net, const std::vector<std::string>& path, TrafficClass tc,
                              Bandwidth bw, LspId id, Tick now = 0) {
  if (path.empty()) throw Error(Error::Code::InvalidArgument, "empty path");
  for (const auto& lid : path) {
    if (!net.contains(lid)) throw Error(Error::Code::UnknownLink, "unknown link " + lid);
  }
  Network saved = net;
  Decision out;
  out.outcome = Outcome::Granted;
  for (const auto& lid : path) {
    Decision d = admit(net.at(lid), tc, bw, id, now);
    if (!d.granted()) {
      net = std::move(saved);
      Decision denied;
      denied.failed_link = lid;
      return denied;
    }
    for (LspId v : d.preempted) {
      release_everywhere(net, v);
      if (std::find(out.preempted.begin(), out.preempted.end(), v) == out.preempted.end()) {
        out.preempted.push_back(v);
      }
    }
    if (lid == path.front()) out.draw = d.draw;
  }
  if (!out.preempted.empty()) out.outcome = Outcome::GrantedWithPreemptions;
  return out;
}

}  // namespace psiot::bam
