#pragma once

// Central orchestrator: turns aggregator metadata into per-class rate
// assignments and backs every assigned rate with an LSP obtained from the
// BAM broker.
//
// Rates come from a static proportional policy (the budget split evenly
// across aggregators, then across QoS levels by class_split) plus a reactive
// rule: when an aggregator's class buffer crosses the threshold, bandwidth
// that other aggregators are not using in that class is moved to it, never
// pushing a donor below its measured ingest rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "psiot/aggregator.hpp"
#include "psiot/bam.hpp"
#include "psiot/core.hpp"

namespace psiot::orch {

struct RecomputePolicy {
  enum class Kind { OnEveryMetadata, Interval };
  Kind kind = Kind::OnEveryMetadata;
  int interval_ticks = 0;
  friend bool operator==(const RecomputePolicy&, const RecomputePolicy&) = default;
};

struct OrchestratorConfig {
  Bandwidth total_budget = 900'000;
  PerClass<double> class_split{0.25, 0.35, 0.45};  // per QoS level
  double buffer_threshold = 0.5;
  RecomputePolicy recompute;
  friend bool operator==(const OrchestratorConfig&, const OrchestratorConfig&) = default;
};

/// Split fractions in parts per million, so rate arithmetic stays integral.
inline PerClass<std::int64_t> split_ppm(const OrchestratorConfig& cfg) {
  PerClass<std::int64_t> out{};
  for (int c = 0; c < kNumClasses; ++c) out[c] = std::llround(cfg.class_split[c] * 1e6);
  return out;
}

/// Sum of all base rates: the budget scaled by the split total.
inline Bandwidth base_total(const OrchestratorConfig& cfg) {
  const auto ppm = split_ppm(cfg);
  return cfg.total_budget * (ppm[0] + ppm[1] + ppm[2]) / 1'000'000;
}

using RateMap = std::map<std::string, PerClass<Bandwidth>>;

/// Static policy: share = budget / n per aggregator, then share x split per
/// level. Rounds down, so the result never exceeds the split budget.
inline RateMap compute_rates(const OrchestratorConfig& cfg, const std::vector<std::string>& ids) {
  if (ids.empty()) throw Error(Error::Code::NoAggregators, "no aggregators to schedule");
  const auto ppm = split_ppm(cfg);
  const auto n = static_cast<std::int64_t>(std::set<std::string>(ids.begin(), ids.end()).size());
  RateMap out;
  for (const auto& id : ids) {
    auto& r = out[id];
    for (int c = 0; c < kNumClasses; ++c) r[c] = cfg.total_budget * ppm[c] / (n * 1'000'000);
  }
  return out;
}

struct HotSpot {
  std::string aggregator_id;
  QosClass qos = QosClass::Insensitive;
};

struct Reallocation {
  RateMap adjusted;
  Bandwidth deficit = 0;
  Bandwidth slack = 0;
  Bandwidth offered = 0;  // min(slack, deficit)
  Bandwidth bam_cap = 0;  // largest hot rate the broker could back
  Bandwidth granted = 0;  // increase actually planned for the hot class
  std::map<std::string, Bandwidth> taken;  // per donor
};

struct OrchEvent {
  std::string type;
  nlohmann::json data;
};

struct Channel {
  bam::LspId lsp;
  Bandwidth bw = 0;
};

namespace detail {

/// Splits `amount` across donors proportionally to their slack, largest
/// remainders first, never exceeding any donor's slack.
inline std::map<std::string, Bandwidth> proportional_take(
    const std::vector<std::pair<std::string, Bandwidth>>& slack, Bandwidth amount) {
  std::map<std::string, Bandwidth> take;
  Bandwidth total = 0;
  for (const auto& [_, s] : slack) total += s;
  if (total <= 0 || amount <= 0) return take;
  Bandwidth assigned = 0;
  std::vector<std::pair<Bandwidth, std::string>> rema;
  for (const auto& [id, s] : slack) {
    const Bandwidth t = amount * s / total;
    take[id] = t;
    assigned += t;
    rema.push_back({amount * s % total, id});
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::map<std::string, Bandwidth> cap(slack.begin(), slack.end());
  for (std::size_t i = 0; assigned < amount && !rema.empty(); i = (i + 1) % rema.size()) {
    const auto& id = rema[i].second;
    if (take[id] < cap[id]) {
      ++take[id];
      ++assigned;
    }
  }
  return take;
}

}  // namespace detail

class Orchestrator {
 public:
  struct Output {
    std::vector<agg::RateAssignment> assignments;
    std::vector<OrchEvent> events;
  };

  /// channel_paths: for every aggregator, the links its per-class channels
  /// are reserved on.
  Orchestrator(OrchestratorConfig cfg, std::map<std::string, std::vector<std::string>> channel_paths)
      : cfg_(std::move(cfg)), paths_(std::move(channel_paths)) {}

  const OrchestratorConfig& config() const { return cfg_; }
  const std::map<std::string, agg::AggregatorMetadata>& known() const { return known_; }
  const std::map<std::string, agg::RateAssignment>& assignments() const { return assigned_; }
  const std::map<std::pair<std::string, int>, Channel>& channels() const { return channels_; }
  std::uint64_t epoch_counter() const { return epoch_; }

  std::vector<std::string> known_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, _] : known_) ids.push_back(id);
    return ids;
  }

  bool is_hot(const agg::AggregatorMetadata& md, QosClass q) const {
    const auto& cm = md.classes[level(q)];
    return cm.buffer_capacity > 0 &&
           static_cast<double>(cm.occupancy) >=
               cfg_.buffer_threshold * static_cast<double>(cm.buffer_capacity);
  }

  /// Stores the metadata and, when the recompute policy allows, recomputes
  /// every aggregator's rates.
  Output handle_metadata(const agg::AggregatorMetadata& md, bam::Network& net, Tick now) {
    known_[md.aggregator_id] = md;
    Output out;
    out.events.push_back({"metadata_received",
                          {{"aggregator", md.aggregator_id}, {"timestamp", md.timestamp}}});
    if (cfg_.recompute.kind == RecomputePolicy::Kind::OnEveryMetadata || recompute_due(now)) {
      recompute(net, now, out);
    }
    return out;
  }

  /// Periodic hook for the Interval policy.
  Output tick(bam::Network& net, Tick now) {
    Output out;
    if (cfg_.recompute.kind == RecomputePolicy::Kind::Interval && !known_.empty() &&
        recompute_due(now)) {
      recompute(net, now, out);
    }
    return out;
  }

  /// Re-issues every current assignment under a fresh epoch, e.g. after the
  /// orchestrator becomes reachable again.
  Output resync(Tick now) {
    Output out;
    for (auto& [id, ra] : assigned_) {
      ra.epoch = ++epoch_;
      out.assignments.push_back(ra);
    }
    out.events.push_back({"resync", {{"tick", now}, {"aggregators", assigned_.size()}}});
    return out;
  }

  /// Reactive rule for one hot (aggregator, class) against the target plan.
  Reallocation reactive_reallocate(const HotSpot& hot, const RateMap& targets,
                                   const bam::Network& net) const {
    const int c = level(hot.qos);
    Reallocation r;
    r.adjusted = targets;
    const auto& hot_md = known_.at(hot.aggregator_id);
    const Bandwidth hot_rate = targets.at(hot.aggregator_id)[c];
    r.deficit = std::max<Bandwidth>(0, hot_md.classes[c].ingest_rate - hot_rate);

    std::vector<std::pair<std::string, Bandwidth>> donors;
    for (const auto& [id, rates] : targets) {
      if (id == hot.aggregator_id) continue;
      const auto it = known_.find(id);
      const Bandwidth ingest = it == known_.end() ? 0 : it->second.classes[c].ingest_rate;
      const Bandwidth s = std::max<Bandwidth>(0, rates[c] - ingest);
      if (s > 0) donors.push_back({id, s});
      r.slack += s;
    }
    r.offered = std::min(r.slack, r.deficit);
    if (r.offered == 0) return r;

    // What could the broker back once every planned shrink has happened?
    bam::Network scratch = net;
    auto taken = detail::proportional_take(donors, r.offered);
    RateMap plan = targets;
    for (const auto& [id, amount] : taken) plan[id][c] -= amount;
    std::uint64_t scratch_id = ~std::uint64_t{0};
    for (const auto& [key, ch] : channels_) {
      const auto& [id, k] = key;
      const auto it = plan.find(id);
      const Bandwidth after = it == plan.end() ? 0 : it->second[k];
      if (id == hot.aggregator_id || after >= ch.bw) continue;
      bam::release_everywhere(scratch, ch.lsp);
      if (after > 0) {
        bam::allocate_path(scratch, paths_.at(id), qos_to_tc(qos_from_level(k)), after,
                           bam::LspId{scratch_id--});
      }
    }
    // The hot aggregator's other classes as planned, since they share its path.
    const auto& hot_path = paths_.at(hot.aggregator_id);
    for (int k = 0; k < kNumClasses; ++k) {
      const auto ch = channels_.find({hot.aggregator_id, k});
      if (ch != channels_.end()) bam::release_everywhere(scratch, ch->second.lsp);
    }
    for (int k = 0; k < kNumClasses; ++k) {
      if (k == c) continue;
      const TrafficClass tc = qos_to_tc(qos_from_level(k));
      const Bandwidth want = std::min(plan.at(hot.aggregator_id)[k], bam::path_headroom(scratch, hot_path, tc));
      if (want > 0) bam::allocate_path(scratch, hot_path, tc, want, bam::LspId{scratch_id--});
    }
    r.bam_cap = bam::path_headroom(scratch, paths_.at(hot.aggregator_id), qos_to_tc(hot.qos));
    r.granted = std::clamp<Bandwidth>(r.bam_cap - hot_rate, 0, r.offered);
    if (r.granted < r.offered) taken = detail::proportional_take(donors, r.granted);

    r.taken = taken;
    r.adjusted[hot.aggregator_id][c] += r.granted;
    for (const auto& [id, amount] : taken) r.adjusted[id][c] -= amount;
    return r;
  }

  /// Obtains a fresh channel for (aggregator, class) over the aggregator's
  /// channel path. Preempted channels of other aggregators are forgotten and
  /// reported through `victims`.
  std::optional<bam::LspId> request_channel(const std::string& aggregator_id, QosClass qos,
                                            Bandwidth bw, bam::Network& net, Tick now,
                                            std::vector<std::pair<std::string, int>>& victims,
                                            Output& out) {
    const bam::LspId id{++next_lsp_};
    const auto& path = paths_.at(aggregator_id);
    bam::Decision d = bam::allocate_path(net, path, qos_to_tc(qos), bw, id, now);
    if (!d.granted()) {
      out.events.push_back({"channel_denied",
                            {{"aggregator", aggregator_id},
                             {"class", level(qos)},
                             {"bw", bw},
                             {"link", d.failed_link.value_or("")}}});
      return std::nullopt;
    }
    channels_[{aggregator_id, level(qos)}] = Channel{id, bw};
    out.events.push_back({"channel_granted",
                          {{"aggregator", aggregator_id},
                           {"class", level(qos)},
                           {"lsp", id.value},
                           {"bw", bw},
                           {"draw", d.draw}}});
    for (bam::LspId v : d.preempted) {
      for (auto it = channels_.begin(); it != channels_.end(); ++it) {
        if (it->second.lsp == v) {
          out.events.push_back({"channel_preempted",
                                {{"aggregator", it->first.first},
                                 {"class", it->first.second},
                                 {"lsp", v.value},
                                 {"bw", it->second.bw},
                                 {"by", aggregator_id}}});
          victims.push_back(it->first);
          channels_.erase(it);
          break;
        }
      }
    }
    return id;
  }

 private:
  bool recompute_due(Tick now) const {
    return !last_recompute_ || now - *last_recompute_ >= cfg_.recompute.interval_ticks;
  }

  Bandwidth channel_bw(const std::string& id, int c) const {
    const auto it = channels_.find({id, c});
    return it == channels_.end() ? 0 : it->second.bw;
  }

  void drop_channel(const std::string& id, int c, bam::Network& net) {
    const auto it = channels_.find({id, c});
    if (it == channels_.end()) return;
    bam::release_everywhere(net, it->second.lsp);
    channels_.erase(it);
  }

  void recompute(bam::Network& net, Tick now, Output& out) {
    last_recompute_ = now;
    RateMap targets = compute_rates(cfg_, known_ids());

    std::vector<std::pair<HotSpot, Reallocation>> reallocs;
    std::set<std::pair<std::string, int>> hot_now;
    for (const auto& [id, md] : known_) {
      for (QosClass q : kAllQos) {
        if (!is_hot(md, q)) continue;
        hot_now.insert({id, level(q)});
        HotSpot hot{id, q};
        Reallocation r = reactive_reallocate(hot, targets, net);
        targets = r.adjusted;
        reallocs.push_back({hot, std::move(r)});
      }
    }

    RateMap granted = reconcile(targets, net, now, out);

    // Report a hot spot when it first appears and whenever its rates move.
    for (const auto& [hot, r] : reallocs) {
      const int c = level(hot.qos);
      const bool fresh = !hot_.contains({hot.aggregator_id, c});
      bool moved = false;
      for (const auto& [id, rates] : granted) {
        const auto it = assigned_.find(id);
        if (it == assigned_.end() || it->second.rate_per_class[c] != rates[c]) moved = true;
      }
      if (!fresh && !moved) continue;
      nlohmann::json donors = nlohmann::json::array();
      for (const auto& [id, md] : known_) {
        if (id == hot.aggregator_id) continue;
        donors.push_back({{"aggregator", id},
                          {"rate", granted[id][c]},
                          {"ingest_rate", md.classes[c].ingest_rate}});
      }
      out.events.push_back(
          {r.offered == 0 ? "reallocation_no_slack" : "reallocation",
           {{"aggregator", hot.aggregator_id},
            {"class", c},
            {"occupancy", known_.at(hot.aggregator_id).classes[c].occupancy},
            {"ingest_rate", known_.at(hot.aggregator_id).classes[c].ingest_rate},
            {"deficit", r.deficit},
            {"slack", r.slack},
            {"offered", r.offered},
            {"bam_cap", r.bam_cap},
            {"planned_increase", r.granted},
            {"rate", granted[hot.aggregator_id][c]},
            {"donors", donors}}});
    }
    hot_ = std::move(hot_now);

    for (const auto& [id, rates] : granted) {
      const auto it = assigned_.find(id);
      if (it != assigned_.end() && it->second.rate_per_class == rates) continue;
      agg::RateAssignment ra{id, rates, ++epoch_};
      assigned_[id] = ra;
      out.assignments.push_back(ra);
    }
  }

  /// Brings the channels in line with the targets: shrink first, then grow.
  /// A growth the broker cannot fully back is capped at what it can admit
  /// without preemption. Returns the rates actually backed.
  RateMap reconcile(const RateMap& targets, bam::Network& net, Tick now, Output& out) {
    RateMap granted;
    for (const auto& [id, _] : targets) {
      for (int c = 0; c < kNumClasses; ++c) granted[id][c] = channel_bw(id, c);
    }
    std::vector<std::pair<std::string, int>> victims;

    for (const auto& [id, want] : targets) {
      for (int c = 0; c < kNumClasses; ++c) {
        if (want[c] >= channel_bw(id, c)) continue;
        drop_channel(id, c, net);
        if (want[c] > 0 &&
            !request_channel(id, qos_from_level(c), want[c], net, now, victims, out)) {
          throw std::logic_error("broker refused to shrink a channel");
        }
        granted[id][c] = want[c];
      }
    }

    for (const auto& [id, want] : targets) {
      for (int c = 0; c < kNumClasses; ++c) {
        const Bandwidth have = channel_bw(id, c);
        if (want[c] <= have) continue;
        if (std::find(victims.begin(), victims.end(), std::pair{id, c}) != victims.end()) continue;
        drop_channel(id, c, net);
        Bandwidth got = want[c];
        if (!request_channel(id, qos_from_level(c), got, net, now, victims, out)) {
          got = std::min(want[c], bam::path_headroom(net, paths_.at(id), qos_to_tc(qos_from_level(c))));
          if (got > 0 && !request_channel(id, qos_from_level(c), got, net, now, victims, out)) {
            throw std::logic_error("broker refused an admissible channel");
          }
        }
        granted[id][c] = got;
      }
    }

    for (const auto& v : victims) granted[v.first][v.second] = channel_bw(v.first, v.second);
    return granted;
  }

  OrchestratorConfig cfg_;
  std::map<std::string, std::vector<std::string>> paths_;
  std::map<std::string, agg::AggregatorMetadata> known_;
  std::map<std::string, agg::RateAssignment> assigned_;
  std::map<std::pair<std::string, int>, Channel> channels_;
  std::uint64_t epoch_ = 0;
  std::uint64_t next_lsp_ = 0;
  std::optional<Tick> last_recompute_;
  std::set<std::pair<std::string, int>> hot_;
};

}  // namespace psiot::orch
