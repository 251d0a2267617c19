#pragma once

// Run output files: metrics time series, link utilization, event log,
// manifest and summary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "psiot/netsim.hpp"
#include "psiot/scenario_io.hpp"

namespace psiot::report {

inline constexpr const char* kToolName = "psiot";
inline constexpr const char* kToolVersion = "0.1.0";

enum class Format { Csv, Jsonl };

inline std::string metrics_csv(const sim::MetricsSeries& m) {
  std::string s = "tick,agg_id,class,occupancy,rate,delivered,dropped\n";
  char line[256];
  for (const auto& r : m.rows) {
    std::snprintf(line, sizeof line, "%lld,%s,%d,%lld,%lld,%lld,%lld\n", static_cast<long long>(r.tick),
                  r.aggregator.c_str(), level(r.qos), static_cast<long long>(r.occupancy),
                  static_cast<long long>(r.rate), static_cast<long long>(r.delivered),
                  static_cast<long long>(r.dropped));
    s += line;
  }
  return s;
}

inline std::string metrics_jsonl(const sim::MetricsSeries& m) {
  std::string s;
  for (const auto& r : m.rows) {
    nlohmann::ordered_json j;
    j["tick"] = r.tick;
    j["agg_id"] = r.aggregator;
    j["class"] = level(r.qos);
    j["occupancy"] = r.occupancy;
    j["rate"] = r.rate;
    j["delivered"] = r.delivered;
    j["dropped"] = r.dropped;
    s += j.dump() + "\n";
  }
  return s;
}

inline std::string links_csv(const sim::MetricsSeries& m) {
  std::string s = "tick,link,iot_bytes,cross_bytes,utilization\n";
  char line[256];
  for (const auto& l : m.links) {
    std::snprintf(line, sizeof line, "%lld,%s,%lld,%lld,%.6f\n", static_cast<long long>(l.tick), l.link.c_str(),
                  static_cast<long long>(l.iot_bytes), static_cast<long long>(l.cross_bytes), l.utilization);
    s += line;
  }
  return s;
}

inline std::string links_jsonl(const sim::MetricsSeries& m) {
  std::string s;
  char util[32];
  for (const auto& l : m.links) {
    std::snprintf(util, sizeof util, "%.6f", l.utilization);
    nlohmann::ordered_json j;
    j["tick"] = l.tick;
    j["link"] = l.link;
    j["iot_bytes"] = l.iot_bytes;
    j["cross_bytes"] = l.cross_bytes;
    j["utilization"] = std::stod(util);
    s += j.dump() + "\n";
  }
  return s;
}

/// Everything needed to repeat a run: the resolved scenario (defaults
/// filled in, seed included), the output format and the tool version.
inline nlohmann::ordered_json manifest(const sim::Scenario& resolved, std::uint64_t seed, Format fmt) {
  nlohmann::ordered_json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["seed"] = seed;
  j["format"] = fmt == Format::Csv ? "csv" : "jsonl";
  j["scenario"] = sim::to_json(resolved);
  return j;
}

inline nlohmann::ordered_json summary(const sim::Scenario& s, const sim::RunResult& r) {
  nlohmann::ordered_json j;
  j["scenario"] = s.name;
  j["ticks"] = r.ticks;
  j["fatal"] = r.fatal;
  j["reallocations"] = r.log.of_type("reallocation").size();
  j["overloads"] = r.log.of_type("overload").size();
  nlohmann::ordered_json aggs = nlohmann::ordered_json::array();
  for (const auto& t : r.totals) {
    nlohmann::ordered_json a;
    a["id"] = t.id;
    a["generated_bytes"] = t.generated;
    a["delivered_bytes"] = t.delivered;
    Bytes dropped = 0;
    Bytes max_occ = 0;
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (int c = 0; c < kNumClasses; ++c) {
      const auto& ct = t.classes[c];
      dropped += ct.dropped;
      max_occ = std::max(max_occ, ct.max_occupancy);
      nlohmann::ordered_json cj;
      cj["class"] = c;
      cj["capacity"] = ct.capacity;
      cj["max_occupancy"] = ct.max_occupancy;
      cj["dropped_bytes"] = ct.dropped;
      cj["dequeued_bytes"] = ct.dequeued;
      cj["mean_latency_ticks"] = ct.items > 0 ? static_cast<double>(ct.latency_ticks) / ct.items : 0.0;
      classes.push_back(std::move(cj));
    }
    a["dropped_bytes"] = dropped;
    a["max_occupancy"] = max_occ;
    a["classes"] = std::move(classes);
    aggs.push_back(std::move(a));
  }
  j["aggregators"] = std::move(aggs);
  return j;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

/// Writes metrics, links, events and manifest into `dir`, creating it.
inline void write_outputs(const std::filesystem::path& dir, const sim::Scenario& resolved, std::uint64_t seed,
                          Format fmt, const sim::RunResult& r) {
  std::filesystem::create_directories(dir);
  if (fmt == Format::Csv) {
    write_file(dir / "metrics.csv", metrics_csv(r.metrics));
    write_file(dir / "links.csv", links_csv(r.metrics));
  } else {
    write_file(dir / "metrics.jsonl", metrics_jsonl(r.metrics));
    write_file(dir / "links.jsonl", links_jsonl(r.metrics));
  }
  write_file(dir / "events.jsonl", r.log.to_jsonl());
  write_file(dir / "manifest.json", manifest(resolved, seed, fmt).dump(2) + "\n");
}

}  // namespace psiot::report
