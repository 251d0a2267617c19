// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <map>
#include <string>

#include "bam_oracle.hpp"
#include "psiot/netsim.hpp"
#include "psiot/report.hpp"
#include "psiot/scenario_io.hpp"

using namespace psiot;
using namespace psiot::sim;

namespace {

int failures = 0;

void verdict(bool ok, const char* name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const MetricRow& row(const RunResult& r, Tick t, int agg_index, int cls) {
  return r.metrics.rows[static_cast<std::size_t>(t) * 9 + static_cast<std::size_t>(agg_index) * 3 +
                        static_cast<std::size_t>(cls)];
}

}  // namespace

int main() {
  const Scenario sc = build_paper_poc();
  const std::vector<std::string> ids{"ag1", "ag2", "ag3"};
  const Tick sub1 = 100, sub2 = 600;

  const auto t0 = std::chrono::steady_clock::now();
  const RunResult r = run(sc, sc.sim.seed);
  const double runtime = seconds_since(t0);
  const bool shaped = !r.fatal && r.metrics.rows.size() == static_cast<std::size_t>(r.ticks) * 9 && r.ticks == 1800;
  if (!shaped) std::printf("note: run fatal=%d ticks=%lld\n", r.fatal, static_cast<long long>(r.ticks));

  // Phase 1: near-empty buffers between the two subscriptions.
  {
    double worst = 0;
    for (Tick t = sub1; shaped && t < sub2; ++t) {
      for (int a = 0; a < 3; ++a) {
        for (int c = 0; c < 3; ++c) {
          const auto& m = row(r, t, a, c);
          const double cap = static_cast<double>(sc.aggregators[a].buffer.capacity(m.qos));
          worst = std::max(worst, static_cast<double>(m.occupancy) / cap);
        }
      }
    }
    verdict(shaped && worst < 0.05 && runtime < 10.0, "phase1_near_empty",
            fmt("max occupancy %.4f%% of capacity in ticks [100,600), runtime %.3f s", worst * 100, runtime));
  }

  // Phase 2: Ag1 Priority grows window by window until it saturates; Ag2/Ag3 stay calm.
  {
    const Bytes cap = sc.aggregators[0].buffer.capacity(QosClass::Priority);
    Tick saturated = -1;
    Bytes dropped = 0;
    for (Tick t = sub2; shaped && t < r.ticks; ++t) {
      dropped += row(r, t, 0, 2).dropped;
      if (dropped > 0) {
        saturated = t;
        break;
      }
    }
    bool monotone = saturated > 0;
    Tick windows = 0;
    for (Tick w = sub2; monotone && w + 50 <= saturated; w += 50, ++windows) {
      if (row(r, w + 50, 0, 2).occupancy < row(r, w, 0, 2).occupancy) monotone = false;
    }
    // Every 50-tick window up to saturation, tick by tick.
    for (Tick t = sub2; monotone && t + 1 <= saturated; ++t) {
      if (row(r, t + 1, 0, 2).occupancy < row(r, t, 0, 2).occupancy) monotone = false;
    }
    const auto& tot = r.totals_for("ag1").classes[2];
    const bool full = tot.max_occupancy == cap;
    double others = 0;
    for (Tick t = sub2; shaped && t < r.ticks; ++t) {
      for (int a = 1; a < 3; ++a) {
        for (int c = 0; c < 3; ++c) {
          const auto& m = row(r, t, a, c);
          others = std::max(others, static_cast<double>(m.occupancy) /
                                        static_cast<double>(sc.aggregators[a].buffer.capacity(m.qos)));
        }
      }
    }
    const bool calm = others < sc.orchestrator.buffer_threshold;
    verdict(shaped && monotone && full && calm, "phase2_ag1_fills",
            fmt("nondecreasing tick by tick over ticks [600,%lld] (%lld full 50-tick windows), saturated at "
                "tick %lld (high water %lld of %lld); Ag2/Ag3 max %.4f%% of capacity",
                static_cast<long long>(saturated), static_cast<long long>(windows), static_cast<long long>(saturated),
                static_cast<long long>(tot.max_occupancy), static_cast<long long>(cap), others * 100));
  }

  // Reactive trigger and non-impairment.
  {
    const Bytes cap = sc.aggregators[0].buffer.capacity(QosClass::Priority);
    Tick crossed = -1;
    for (Tick t = 0; shaped && t < r.ticks; ++t) {
      if (2 * row(r, t, 0, 2).occupancy >= cap) {
        crossed = t;
        break;
      }
    }
    Tick realloc_at = -1;
    for (const auto* rec : r.log.of_type("reallocation")) {
      if (rec->data["aggregator"] == "ag1" && rec->data["class"] == 2 && rec->tick >= crossed) {
        realloc_at = rec->tick;
        break;
      }
    }
    const bool timely = crossed >= 0 && realloc_at >= 0 && realloc_at - crossed <= 10;

    // Replay the log: every assignment to a calm class keeps it at or above
    // min(base rate, last reported ingest).
    const auto base = orch::compute_rates(sc.orchestrator, ids);
    std::map<std::string, std::array<Bandwidth, 3>> ingest;
    std::map<std::string, std::array<bool, 3>> hot;
    long checked = 0, violations = 0;
    for (const auto& rec : r.log.records()) {
      if (rec.type == "metadata") {
        const std::string id = rec.data["aggregator"];
        for (int c = 0; c < 3; ++c) {
          const auto& cm = rec.data["classes"][c];
          ingest[id][c] = cm["ingest_rate"].get<Bandwidth>();
          hot[id][c] = 2 * cm["occupancy"].get<Bytes>() >= cm["capacity"].get<Bytes>();
        }
      } else if (rec.type == "assignment" && rec.tick >= sub1) {
        const std::string id = rec.data["aggregator"];
        for (int c = 0; c < 3; ++c) {
          if (hot[id][c]) continue;
          ++checked;
          if (rec.data["rates"][c].get<Bandwidth>() < std::min(base.at(id)[c], ingest[id][c])) ++violations;
        }
      }
    }
    for (const auto* rec : r.log.of_type("reallocation")) {
      for (const auto& d : rec->data["donors"]) {
        ++checked;
        if (d["rate"].get<Bandwidth>() < std::min<Bandwidth>(d["ingest_rate"].get<Bandwidth>(),
                                                               base.at(d["aggregator"])[rec->data["class"].get<int>()])) {
          ++violations;
        }
      }
    }
    verdict(timely && violations == 0 && checked > 0, "reactive_reallocation",
            fmt("50%% crossed at tick %lld, reallocation at tick %lld; %ld non-impairment checks, %ld violations",
                static_cast<long long>(crossed), static_cast<long long>(realloc_at), checked, violations));
  }

  // Scheduler split, from the formula and as assigned during the run.
  {
    const auto rates = orch::compute_rates(sc.orchestrator, ids);
    const std::array<Bandwidth, 3> expect{75'000, 105'000, 135'000};
    bool ok = true;
    for (const auto& id : ids) {
      for (int c = 0; c < 3; ++c) ok = ok && std::llabs(rates.at(id)[c] - expect[c]) <= 1;
    }
    int seen = 0;
    for (const auto& id : ids) {
      for (int c = 0; c < 3; ++c) {
        if (!shaped) break;
        const auto& m = row(r, sub1, static_cast<int>(&id - ids.data()), c);
        ok = ok && std::llabs(m.rate - expect[c]) <= 1;
        ++seen;
      }
    }
    verdict(ok && seen == 9, "scheduler_split",
            fmt("(%lld; %lld; %lld) B/s per aggregator, confirmed on all %d live classes at tick 100",
                static_cast<long long>(rates.at("ag1")[0]), static_cast<long long>(rates.at("ag1")[1]),
                static_cast<long long>(rates.at("ag1")[2]), seen));
  }

  // BAM property suite.
  {
    const auto t1 = std::chrono::steady_clock::now();
    long sequences = 0, steps = 0, preemptions = 0, fails = 0;
    std::string first;
    for (auto model : {bam::Model::Mam, bam::Model::Rdm, bam::Model::Atcs}) {
      const auto rep = oracle::property_suite(model, 10'000, 0xACCE97 + static_cast<int>(model));
      sequences += rep.sequences;
      steps += rep.steps;
      preemptions += rep.preemptions;
      fails += rep.failures;
      if (first.empty()) first = rep.first_failure;
    }
    const double secs = seconds_since(t1);
    verdict(fails == 0 && sequences == 30'000 && secs < 60.0, "bam_property_suite",
            fmt("%ld sequences, %ld steps, %ld preemptions, %ld failures, %.2f s%s%s", sequences, steps,
                preemptions, fails, secs, first.empty() ? "" : "; first: ", first.c_str()));
  }

  // BAM brute-force oracle equivalence.
  {
    const auto rep = oracle::oracle_suite(bam::Model::Atcs, 2'000, 0x0AC1E5);
    verdict(rep.failures == 0 && rep.sequences >= 1'000, "bam_oracle_equivalence",
            fmt("%ld instances, %ld admits compared, %ld denials, %ld preemptions, %ld mismatches%s%s",
                rep.sequences, rep.checks, rep.denials, rep.preemptions, rep.failures,
                rep.first_failure.empty() ? "" : "; first: ", rep.first_failure.c_str()));
  }

  // Conservation at every tick, plus the generated total from source arithmetic.
  {
    long bad = 0;
    for (const auto& c : r.conservation) bad += !c.holds();
    Bytes generated = 0;
    for (const auto& a : sc.aggregators) {
      for (const auto& t : a.topics) {
        generated += (t.phase * 1'000'000 + t.rate * sc.sim.tick.count() * r.ticks) / (t.msg_size * 1'000'000) *
                     t.msg_size;
      }
    }
    const bool ok = shaped && bad == 0 && r.conservation.size() == 1800 &&
                    r.conservation.back().generated == generated;
    verdict(ok, "conservation",
            fmt("%zu ticks checked, %ld violations; generated %lld B (expected %lld)", r.conservation.size(), bad,
                static_cast<long long>(r.conservation.empty() ? 0 : r.conservation.back().generated),
                static_cast<long long>(generated)));
  }

  // Determinism.
  {
    const RunResult again = run(sc, sc.sim.seed);
    const auto fmt_csv = report::Format::Csv;
    const bool metrics = report::metrics_csv(r.metrics) == report::metrics_csv(again.metrics) &&
                         report::links_csv(r.metrics) == report::links_csv(again.metrics);
    const bool events = r.log.to_jsonl() == again.log.to_jsonl();
    const bool manifest = report::manifest(sc, sc.sim.seed, fmt_csv).dump(2) ==
                          report::manifest(build_paper_poc(), sc.sim.seed, fmt_csv).dump(2);
    verdict(metrics && events && manifest, "determinism",
            fmt("metrics %s, event log %s (%zu records), manifest %s", metrics ? "identical" : "differ",
                events ? "identical" : "differ", r.log.records().size(), manifest ? "identical" : "differ"));
  }

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
