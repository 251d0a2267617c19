#pragma once

// Deterministic discrete-event kernel. Time advances in fixed ticks; every
// tick runs the same phases in the same order:
//
//   1. scenario events
//   2. device sources -> aggregator ingest
//   3. cross-traffic load
//   4. metadata -> orchestrator -> rate assignments applied
//   5. aggregator transmit -> link transport
//   6. metrics sampling and conservation check
//
// Transport is fluid: bytes dequeued in a tick reach their consumers within
// the same tick. A dequeued message crosses its aggregator's channel path
// once and is then copied onto each subscriber's remaining route links.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "psiot/aggregator.hpp"
#include "psiot/bam.hpp"
#include "psiot/core.hpp"
#include "psiot/orchestrator.hpp"
#include "psiot/scenario.hpp"

namespace psiot::sim {

/// Simulated device traffic for one topic: whole messages emitted from a
/// byte accumulator, so the long-run rate converges to the configured one.
class DeviceSource {
 public:
  DeviceSource(std::string topic, Bandwidth rate, Bytes msg_size, Bytes phase = 0,
               double jitter = 0.0, std::uint64_t seed = 0)
      : topic_(std::move(topic)),
        rate_(rate),
        msg_size_(msg_size),
        jitter_(jitter),
        carry_(phase * kScale),
        rng_(seed) {
    if (msg_size_ <= 0) throw Error(Error::Code::InvalidArgument, "msg_size must be > 0");
  }

  const std::string& topic() const { return topic_; }
  Bandwidth rate() const { return rate_; }
  Bytes msg_size() const { return msg_size_; }

  /// Number of whole messages due this tick.
  std::int64_t tick_count(Duration dt) {
    if (dt.count() <= 0) throw Error(Error::Code::InvalidArgument, "dt must be positive");
    std::int64_t add = rate_ * dt.count();
    if (jitter_ > 0.0 && add > 0) {
      // Top 53 bits of the engine output -> uniform in [-1, 1).
      const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-52 - 1.0;
      add = std::llround(static_cast<double>(add) * (1.0 + jitter_ * u));
    }
    carry_ += add;
    const std::int64_t n = carry_ / (msg_size_ * kScale);
    carry_ -= n * msg_size_ * kScale;
    return n;
  }

  std::vector<std::pair<std::string, Bytes>> source_tick(Duration dt) {
    const std::int64_t n = tick_count(dt);
    return std::vector<std::pair<std::string, Bytes>>(static_cast<std::size_t>(n),
                                                      {topic_, msg_size_});
  }

 private:
  static constexpr std::int64_t kScale = 1'000'000;

  std::string topic_;
  Bandwidth rate_;
  Bytes msg_size_;
  double jitter_;
  std::int64_t carry_;
  std::mt19937_64 rng_;
};

/// Unmanaged background load on a fixed route. Invisible to the BAM.
class CrossTrafficGen {
 public:
  CrossTrafficGen(CrossTrafficSpec spec, std::vector<std::string> route)
      : spec_(std::move(spec)), route_(std::move(route)) {}

  const std::vector<std::string>& route() const { return route_; }
  const CrossTrafficSpec& spec() const { return spec_; }

  /// Bytes sent in the tick that is `elapsed` ticks after start.
  Bytes tick_bytes(Tick elapsed, Duration dt) {
    if (spec_.profile == CrossTrafficSpec::Profile::OnOff) {
      const Tick period = spec_.on_ticks + spec_.off_ticks;
      if (elapsed % period >= spec_.on_ticks) return 0;
    }
    carry_ += spec_.rate * dt.count();
    const Bytes b = carry_ / 1'000'000;
    carry_ -= b * 1'000'000;
    return b;
  }

 private:
  CrossTrafficSpec spec_;
  std::vector<std::string> route_;
  std::int64_t carry_ = 0;
};

struct Transfer {
  std::vector<std::string> links;
  Bytes bytes = 0;
};

struct LinkSample {
  Tick tick = 0;
  std::string link;
  Bytes iot_bytes = 0;
  Bytes cross_bytes = 0;
  double utilization = 0.0;  // clamped to 1.0
  bool overload = false;
};

/// Charges transfers and cross traffic onto links and reports utilization
/// per link, in topology order.
inline std::vector<LinkSample> transport_tick(const Topology& topo, const std::vector<Transfer>& transfers,
                                              const std::map<std::string, Bytes>& cross_bytes,
                                              Duration dt, Tick now = 0) {
  std::map<std::string, Bytes> iot;
  for (const auto& tr : transfers) {
    for (const auto& l : tr.links) iot[l] += tr.bytes;
  }
  std::vector<LinkSample> out;
  out.reserve(topo.links.size());
  for (const auto& l : topo.links) {
    LinkSample s;
    s.tick = now;
    s.link = l.id;
    s.iot_bytes = iot.contains(l.id) ? iot.at(l.id) : 0;
    s.cross_bytes = cross_bytes.contains(l.id) ? cross_bytes.at(l.id) : 0;
    const double budget = static_cast<double>(l.capacity) * static_cast<double>(dt.count()) / 1e6;
    const double u = static_cast<double>(s.iot_bytes + s.cross_bytes) / budget;
    s.overload = u > 1.0;
    s.utilization = std::min(u, 1.0);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Outputs

struct LogRecord {
  Tick tick = 0;
  std::uint64_t seq = 0;
  std::string component;
  std::string type;
  nlohmann::json data;
};

/// Totally ordered record of everything that happened in a run. Records are
/// appended in (tick, phase, sequence) order.
class EventLog {
 public:
  void push(Tick tick, std::string component, std::string type, nlohmann::json data = nlohmann::json::object()) {
    records_.push_back({tick, next_seq_++, std::move(component), std::move(type), std::move(data)});
  }
  const std::vector<LogRecord>& records() const { return records_; }

  std::vector<const LogRecord*> of_type(std::string_view type) const {
    std::vector<const LogRecord*> out;
    for (const auto& r : records_) {
      if (r.type == type) out.push_back(&r);
    }
    return out;
  }

  std::string to_jsonl() const {
    std::string s;
    for (const auto& r : records_) {
      nlohmann::ordered_json j;
      j["tick"] = r.tick;
      j["seq"] = r.seq;
      j["component"] = r.component;
      j["type"] = r.type;
      j["data"] = r.data;
      s += j.dump();
      s += '\n';
    }
    return s;
  }

 private:
  std::vector<LogRecord> records_;
  std::uint64_t next_seq_ = 0;
};

struct MetricRow {
  Tick tick = 0;
  std::string aggregator;
  QosClass qos = QosClass::Insensitive;
  Bytes occupancy = 0;
  Bandwidth rate = 0;
  Bandwidth delivered = 0;  // B/s over this tick
  Bytes dropped = 0;        // bytes dropped during this tick
};

struct MetricsSeries {
  std::vector<MetricRow> rows;  // (tick, aggregator, class) order
  std::vector<LinkSample> links;
};

/// End-to-end byte accounting for one tick:
///   generated + duplicated == dequeued + occupancy + dropped + unsubscribed
///   received by consumers  == dequeued bytes x subscriber fan-out
struct ConservationSample {
  Tick tick = 0;
  Bytes generated = 0;
  Bytes duplicated = 0;
  Bytes dequeued = 0;
  Bytes occupancy = 0;
  Bytes dropped = 0;
  Bytes unsubscribed = 0;
  Bytes received = 0;
  Bytes fanout = 0;

  bool holds() const {
    return generated + duplicated == dequeued + occupancy + dropped + unsubscribed &&
           received == fanout;
  }
};

struct ClassTotals {
  Bytes capacity = 0;
  Bytes max_occupancy = 0;
  Bytes dropped = 0;
  Bytes dequeued = 0;
  std::int64_t items = 0;
  std::int64_t latency_ticks = 0;
};

struct AggregatorTotals {
  std::string id;
  Bytes generated = 0;
  Bytes delivered = 0;  // bytes received by consumers
  PerClass<ClassTotals> classes{};
};

struct RunResult {
  EventLog log;
  MetricsSeries metrics;
  std::vector<ConservationSample> conservation;
  std::vector<AggregatorTotals> totals;
  Tick ticks = 0;
  bool fatal = false;

  const AggregatorTotals& totals_for(std::string_view id) const {
    for (const auto& t : totals) {
      if (t.id == id) return t;
    }
    throw Error(Error::Code::InvalidArgument, "no aggregator " + std::string(id));
  }
};

// ---------------------------------------------------------------------------
// Kernel

class Simulation {
 public:
  Simulation(const Scenario& scenario, std::uint64_t seed)
      : sc_(scenario), paths_(channel_paths(scenario)), orch_(scenario.orchestrator, paths_) {
    for (const auto& l : sc_.topology.links) {
      net_.emplace(l.id, bam::LinkState(l.id, l.capacity, sc_.bam.links.at(l.id)));
    }
    std::uint64_t salt = 0;
    for (const auto& spec : sc_.aggregators) {
      agg::AggregatorConfig cfg;
      cfg.id = spec.id;
      for (const auto& tp : spec.topics) cfg.topics.push_back({tp.name, tp.rate, tp.msg_size});
      cfg.buffer = spec.buffer;
      cfg.fallback_rates = spec.fallback_rates;
      cfg.tick = sc_.sim.tick;
      cfg.ingest_window_ticks = sc_.sim.ingest_window_ticks;
      aggs_.emplace(spec.id, agg::Aggregator(std::move(cfg)));
      for (const auto& tp : spec.topics) {
        sources_.push_back({spec.id, DeviceSource(tp.name, tp.rate, tp.msg_size, tp.phase, tp.jitter,
                                                  seed * 0x9E3779B97F4A7C15ULL + ++salt)});
      }
      auto& tot = totals_[spec.id];
      tot.id = spec.id;
      for (QosClass q : kAllQos) tot.classes[level(q)].capacity = spec.buffer.capacity(q);
    }
    for (const auto& x : sc_.cross_traffic) {
      cross_.emplace_back(x, sc_.topology.find_route(x.src, x.dst)->links);
    }
    events_ = sc_.events;
    std::stable_sort(events_.begin(), events_.end(),
                     [](const ScenarioEvent& a, const ScenarioEvent& b) { return a.at < b.at; });
  }

  RunResult run() {
    RunResult res;
    Tick end = 0;
    for (const auto& e : events_) {
      if (e.kind == ScenarioEvent::Kind::End) end = e.at;
    }
    try {
      for (Tick t = 0; t <= end; ++t) {
        if (t == end) {
          for (const auto& e : events_) {
            if (e.at == t && e.kind == ScenarioEvent::Kind::End) {
              if (!e.marker.empty()) res.log.push(t, "scenario", "marker", {{"name", e.marker}});
              res.log.push(t, "scenario", "end");
            }
          }
          break;
        }
        step(t, res);
        res.ticks = t + 1;
        if (res.fatal) break;
      }
    } catch (const std::exception& ex) {
      res.log.push(res.ticks, "kernel", "fatal", {{"what", ex.what()}});
      res.fatal = true;
    }
    for (const auto& [id, tot] : totals_) {
      AggregatorTotals t = tot;
      const auto& a = aggs_.at(id);
      for (QosClass q : kAllQos) {
        t.classes[level(q)].max_occupancy = a.buffer(q).high_water();
        t.classes[level(q)].dropped = a.buffer(q).dropped_total();
      }
      res.totals.push_back(std::move(t));
    }
    return res;
  }

  const std::map<std::string, agg::Aggregator>& aggregators() const { return aggs_; }
  const orch::Orchestrator& orchestrator() const { return orch_; }
  const bam::Network& network() const { return net_; }

 private:
  void step(Tick t, RunResult& res) {
    auto& log = res.log;
    const Duration dt = sc_.sim.tick;

    // 1. scenario events
    std::set<std::string> report;
    std::set<std::string> seen_markers;
    for (const auto& e : events_) {
      if (e.at != t) continue;
      if (!e.marker.empty() && seen_markers.insert(e.marker).second) {
        log.push(t, "scenario", "marker", {{"name", e.marker}});
      }
      using K = ScenarioEvent::Kind;
      switch (e.kind) {
        case K::StartHosts:
          if (!hosts_up_) {
            hosts_up_ = true;
            start_tick_ = t;
            log.push(t, "scenario", "start_hosts");
          }
          break;
        case K::Subscribe: {
          auto [sid, md] = aggs_.at(e.aggregator).subscribe(e.consumer, e.topic, e.qos, t);
          report.insert(e.aggregator);
          log.push(t, "scenario", "subscribe",
                   {{"consumer", e.consumer}, {"aggregator", e.aggregator}, {"topic", e.topic},
                    {"qos", level(e.qos)}, {"sub_id", sid}});
          break;
        }
        case K::Unsubscribe:
          aggs_.at(e.aggregator).unsubscribe(e.consumer, e.topic, t);
          report.insert(e.aggregator);
          log.push(t, "scenario", "unsubscribe",
                   {{"consumer", e.consumer}, {"aggregator", e.aggregator}, {"topic", e.topic}});
          break;
        case K::OrchestratorDown:
          if (orch_up_) {
            orch_up_ = false;
            log.push(t, "scenario", "orchestrator_down");
            for (auto& [id, a] : aggs_) {
              a.on_orchestrator_loss();
              log.push(t, "aggregator", "fallback", {{"aggregator", id}, {"rates", a.rates()}});
            }
          }
          break;
        case K::OrchestratorUp:
          if (!orch_up_) {
            orch_up_ = true;
            resync_ = true;
            log.push(t, "scenario", "orchestrator_up");
          }
          break;
        case K::End:
          break;
      }
    }

    ConservationSample cs = last_cs_;
    cs.tick = t;
    std::map<std::string, PerClass<Bytes>> dropped_now;

    if (hosts_up_) {
      // 2. sources
      for (auto& [aid, src] : sources_) {
        const std::int64_t n = src.tick_count(dt);
        auto& a = aggs_.at(aid);
        for (std::int64_t i = 0; i < n; ++i) {
          PerClass<Bytes> before{};
          for (QosClass q : kAllQos) before[level(q)] = a.buffer(q).dropped_total();
          const auto out = a.ingest(src.topic(), src.msg_size(), t);
          cs.generated += src.msg_size();
          totals_[aid].generated += src.msg_size();
          if (out.copies > 1) cs.duplicated += src.msg_size() * (out.copies - 1);
          for (QosClass q : kAllQos) {
            dropped_now[aid][level(q)] += a.buffer(q).dropped_total() - before[level(q)];
          }
        }
      }
      for (const auto& [aid, per] : dropped_now) {
        for (int c = 0; c < kNumClasses; ++c) {
          if (per[c] > 0) log.push(t, "aggregator", "drop", {{"aggregator", aid}, {"class", c}, {"bytes", per[c]}});
        }
      }
    }

    // 3. cross traffic
    std::map<std::string, Bytes> cross_bytes;
    if (hosts_up_) {
      for (auto& x : cross_) {
        const Bytes b = x.tick_bytes(t - start_tick_, dt);
        for (const auto& l : x.route()) cross_bytes[l] += b;
      }
    }

    // 4. metadata, orchestration, assignments
    if (hosts_up_) {
      for (auto& [id, a] : aggs_) {
        const bool periodic = (t - start_tick_) % sc_.sim.metadata_interval_ticks == 0;
        if (!periodic && !report.contains(id)) continue;
        const auto md = a.report_metadata(t);
        log.push(t, "aggregator", "metadata", metadata_json(md));
        if (!orch_up_) {
          log.push(t, "orchestrator", "metadata_lost", {{"aggregator", id}});
          continue;
        }
        deliver(t, log, orch_.handle_metadata(md, net_, t));
      }
      if (orch_up_) {
        if (resync_) {
          resync_ = false;
          deliver(t, log, orch_.resync(t));
        }
        deliver(t, log, orch_.tick(net_, t));
      }
      check_budget(t, log);
    }

    // 5. transmit and transport
    std::vector<Transfer> transfers;
    std::map<std::string, PerClass<Bytes>> dequeued_now;
    if (hosts_up_) {
      for (auto& [id, a] : aggs_) {
        const auto rep = a.tick_transmit(dt, t);
        const auto& path = paths_.at(id);
        for (int c = 0; c < kNumClasses; ++c) {
          const Bytes b = rep.dequeued_bytes[c];
          dequeued_now[id][c] = b;
          auto& ct = totals_[id].classes[c];
          ct.dequeued += b;
          ct.items += rep.dequeued_items[c];
          ct.latency_ticks += rep.latency_ticks[c];
          cs.dequeued += b;
          if (b > 0) transfers.push_back({path, b});
          check_flow(t, log, res, a, c, b);
          if (rep.dequeued_items[c] > 0) {
            log.push(t, "aggregator", "delivery",
                     {{"aggregator", id}, {"class", c}, {"items", rep.dequeued_items[c]}, {"bytes", b}});
          }
        }
        for (const auto& d : rep.deliveries) {
          cs.received += d.bytes;
          totals_[id].delivered += d.bytes;
          const Route* r = sc_.topology.find_route(id, d.consumer_id);
          std::vector<std::string> tail(r->links.begin() + static_cast<std::ptrdiff_t>(path.size()),
                                        r->links.end());
          if (!tail.empty()) transfers.push_back({std::move(tail), d.bytes});
        }
        cs.fanout += fanout_bytes(a, rep);
      }
    }
    auto samples = transport_tick(sc_.topology, transfers, cross_bytes, dt, t);
    for (const auto& s : samples) {
      if (s.overload) {
        log.push(t, "transport", "overload",
                 {{"link", s.link}, {"iot_bytes", s.iot_bytes}, {"cross_bytes", s.cross_bytes}});
      }
    }

    // 6. metrics
    cs.occupancy = 0;
    cs.dropped = 0;
    cs.unsubscribed = 0;
    for (const auto& [id, a] : aggs_) {
      for (QosClass q : kAllQos) {
        const int c = level(q);
        const auto& buf = a.buffer(q);
        cs.occupancy += buf.occupancy();
        cs.dropped += buf.dropped_total();
        MetricRow row;
        row.tick = t;
        row.aggregator = id;
        row.qos = q;
        row.occupancy = buf.occupancy();
        row.rate = a.rates()[c];
        const Bytes deq = dequeued_now.contains(id) ? dequeued_now.at(id)[c] : 0;
        row.delivered = deq * 1'000'000 / dt.count();
        row.dropped = dropped_now.contains(id) ? dropped_now.at(id)[c] : 0;
        res.metrics.rows.push_back(std::move(row));
      }
      cs.unsubscribed += a.unsubscribed_bytes();
    }
    for (auto& s : samples) res.metrics.links.push_back(std::move(s));
    if (!cs.holds()) {
      log.push(t, "kernel", "fatal", {{"what", "byte conservation violated"}});
      res.fatal = true;
    }
    res.conservation.push_back(cs);
    last_cs_ = cs;
  }

  static Bytes fanout_bytes(const agg::Aggregator& a, const agg::TransmitReport& rep) {
    Bytes b = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      for (const auto& [topic, bytes] : rep.dequeued_by_topic[c]) {
        Bytes n = 0;
        for (const auto& s : a.subscriptions()) {
          if (s.topic == topic && level(s.qos) == c) ++n;
        }
        b += bytes * n;
      }
    }
    return b;
  }

  void deliver(Tick t, EventLog& log, const orch::Orchestrator::Output& out) {
    for (const auto& e : out.events) log.push(t, "orchestrator", e.type, e.data);
    for (const auto& ra : out.assignments) {
      const bool applied = aggs_.at(ra.aggregator_id).apply_rate_assignment(ra);
      log.push(t, "aggregator", "assignment",
               {{"aggregator", ra.aggregator_id},
                {"epoch", ra.epoch},
                {"rates", ra.rate_per_class},
                {"applied", applied}});
    }
  }

  void check_budget(Tick t, EventLog& log) {
    Bandwidth sum = 0;
    for (const auto& [id, ra] : orch_.assignments()) {
      for (Bandwidth r : ra.rate_per_class) sum += r;
    }
    if (sum > orch::base_total(sc_.orchestrator) + 1) {
      log.push(t, "orchestrator", "budget_exceeded", {{"assigned", sum}});
    }
  }

  /// A flow may move at most two ticks' worth of its authorized rate in one
  /// tick (one tick of refill plus the carried-over allowance). While
  /// orchestrated, the authorized rate is the channel's bandwidth.
  void check_flow(Tick t, EventLog& log, RunResult& res, const agg::Aggregator& a, int c, Bytes b) {
    const Duration dt = sc_.sim.tick;
    Bandwidth authorized = a.rates()[c];
    if (a.mode() == agg::RateMode::Orchestrated) {
      const auto& ch = orch_.channels();
      const auto it = ch.find({a.id(), c});
      const Bandwidth lsp = it == ch.end() ? 0 : it->second.bw;
      if (authorized > lsp) {
        log.push(t, "kernel", "fatal",
                 {{"what", "rate above channel bandwidth"}, {"aggregator", a.id()}, {"class", c}});
        res.fatal = true;
      }
      authorized = lsp;
    }
    if (b * 1'000'000 > 2 * authorized * dt.count()) {
      log.push(t, "kernel", "fatal",
               {{"what", "flow exceeded its channel"}, {"aggregator", a.id()}, {"class", c}, {"bytes", b}});
      res.fatal = true;
    }
  }

  static nlohmann::json metadata_json(const agg::AggregatorMetadata& md) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& cm : md.classes) {
      classes.push_back({{"capacity", cm.buffer_capacity},
                         {"occupancy", cm.occupancy},
                         {"ingest_rate", cm.ingest_rate},
                         {"subscribers", cm.subscriber_count}});
    }
    nlohmann::json subs = nlohmann::json::array();
    for (const auto& s : md.subscriptions) {
      subs.push_back({{"consumer", s.consumer_id}, {"topic", s.topic}, {"qos", level(s.qos)}});
    }
    return {{"aggregator", md.aggregator_id}, {"classes", classes}, {"subscriptions", subs}};
  }

  const Scenario& sc_;
  std::map<std::string, std::vector<std::string>> paths_;
  orch::Orchestrator orch_;
  bam::Network net_;
  std::map<std::string, agg::Aggregator> aggs_;
  std::vector<std::pair<std::string, DeviceSource>> sources_;
  std::vector<CrossTrafficGen> cross_;
  std::vector<ScenarioEvent> events_;
  std::map<std::string, AggregatorTotals> totals_;
  ConservationSample last_cs_;
  bool hosts_up_ = false;
  bool orch_up_ = true;
  bool resync_ = false;
  Tick start_tick_ = 0;
};

/// Runs a validated scenario to its end event. Identical (scenario, seed)
/// pairs produce identical results.
inline RunResult run(const Scenario& scenario, std::uint64_t seed) {
  if (auto errs = validate_scenario(scenario); !errs.empty()) {
    throw std::invalid_argument("scenario is invalid: " + describe(errs.front()));
  }
  Simulation sim(scenario, seed);
  return sim.run();
}

}  // namespace psiot::sim
