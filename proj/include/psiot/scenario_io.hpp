#pragma once

// JSON form of a Scenario, plus the built-in proof-of-concept scenario.

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "psiot/scenario.hpp"

namespace psiot::sim {

using nlohmann::ordered_json;

inline std::string_view to_string(CrossTrafficSpec::Profile p) {
  return p == CrossTrafficSpec::Profile::Cbr ? "cbr" : "on_off";
}

inline std::string_view to_string(orch::RecomputePolicy::Kind k) {
  return k == orch::RecomputePolicy::Kind::OnEveryMetadata ? "on_every_metadata" : "interval";
}

// ---------------------------------------------------------------------------
// Serialization

inline ordered_json to_json(const Scenario& s) {
  ordered_json j;
  j["name"] = s.name;
  j["sim"] = {{"tick_us", s.sim.tick.count()},
              {"seed", s.sim.seed},
              {"metadata_interval_ticks", s.sim.metadata_interval_ticks},
              {"ingest_window_ticks", s.sim.ingest_window_ticks}};

  ordered_json nodes = ordered_json::array();
  for (const auto& n : s.topology.nodes) nodes.push_back({{"id", n.id}, {"kind", to_string(n.kind)}});
  ordered_json links = ordered_json::array();
  for (const auto& l : s.topology.links) {
    links.push_back({{"id", l.id}, {"a", l.a}, {"b", l.b}, {"capacity", l.capacity}});
  }
  ordered_json routes = ordered_json::array();
  for (const auto& r : s.topology.routes) {
    routes.push_back({{"src", r.src}, {"dst", r.dst}, {"links", r.links}});
  }
  j["topology"] = {{"nodes", nodes}, {"links", links}, {"routes", routes}};

  ordered_json bl = ordered_json::object();
  for (const auto& [id, c] : s.bam.links) bl[id] = {{"model", to_string(c.model)}, {"bc", c.bc}};
  j["bam"] = {{"devolution", s.bam.devolution}, {"links", bl}};

  const auto& o = s.orchestrator;
  ordered_json rc = {{"kind", to_string(o.recompute.kind)}};
  if (o.recompute.kind == orch::RecomputePolicy::Kind::Interval) rc["interval_ticks"] = o.recompute.interval_ticks;
  j["orchestrator"] = {{"total_budget", o.total_budget},
                       {"class_split", o.class_split},
                       {"buffer_threshold", o.buffer_threshold},
                       {"recompute", rc}};

  ordered_json aggs = ordered_json::array();
  for (const auto& a : s.aggregators) {
    ordered_json topics = ordered_json::array();
    for (const auto& t : a.topics) {
      topics.push_back({{"name", t.name},
                        {"rate", t.rate},
                        {"msg_size", t.msg_size},
                        {"phase", t.phase},
                        {"jitter", t.jitter}});
    }
    ordered_json buf = {{"capacity_per_class", a.buffer.capacity_per_class},
                        {"overflow", agg::to_string(a.buffer.overflow)}};
    if (a.buffer.capacity_override) buf["capacity_override"] = *a.buffer.capacity_override;
    ordered_json aj = {{"id", a.id}, {"topics", topics}, {"buffer", buf}};
    if (a.fallback_rates) aj["fallback_rates"] = *a.fallback_rates;
    aggs.push_back(std::move(aj));
  }
  j["aggregators"] = aggs;

  ordered_json xs = ordered_json::array();
  for (const auto& x : s.cross_traffic) {
    ordered_json xj = {{"src", x.src}, {"dst", x.dst}, {"rate", x.rate}, {"profile", to_string(x.profile)}};
    if (x.profile == CrossTrafficSpec::Profile::OnOff) {
      xj["on_ticks"] = x.on_ticks;
      xj["off_ticks"] = x.off_ticks;
    }
    xs.push_back(std::move(xj));
  }
  j["cross_traffic"] = xs;

  ordered_json evs = ordered_json::array();
  for (const auto& e : s.events) {
    ordered_json ej = {{"at", e.at}, {"kind", to_string(e.kind)}};
    if (e.kind == ScenarioEvent::Kind::Subscribe || e.kind == ScenarioEvent::Kind::Unsubscribe) {
      ej["consumer"] = e.consumer;
      ej["aggregator"] = e.aggregator;
      ej["topic"] = e.topic;
      if (e.kind == ScenarioEvent::Kind::Subscribe) ej["qos"] = level(e.qos);
    }
    if (!e.marker.empty()) ej["marker"] = e.marker;
    evs.push_back(std::move(ej));
  }
  j["events"] = evs;
  return j;
}

inline std::string serialize(const Scenario& s) { return to_json(s).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

/// Reads typed fields out of a JSON document, recording every problem with
/// its JSON path instead of stopping at the first one.
class Reader {
 public:
  explicit Reader(ValidationErrors& errs) : errs_(errs) {}

  void error(const std::string& where, const std::string& msg) {
    errs_.push_back({ValidationError::Kind::InvalidField, where, msg});
  }

  bool object(const nlohmann::json& j, const std::string& where, std::initializer_list<std::string_view> keys) {
    if (!j.is_object()) {
      error(where, "expected an object");
      return false;
    }
    for (const auto& [k, _] : j.items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) error(join(where, k), "unknown field");
    }
    return true;
  }

  const nlohmann::json* array(const nlohmann::json& obj, const std::string& where, const char* key,
                              bool required = true) {
    if (!obj.contains(key)) {
      if (required) error(join(where, key), "missing field");
      return nullptr;
    }
    const auto& v = obj.at(key);
    if (!v.is_array()) {
      error(join(where, key), "expected an array");
      return nullptr;
    }
    return &v;
  }

  template <typename T>
  void get(const nlohmann::json& obj, const std::string& where, const char* key, T& out, bool required) {
    if (!obj.contains(key)) {
      if (required) error(join(where, key), "missing field");
      return;
    }
    read(obj.at(key), join(where, key), out);
  }

  void read(const nlohmann::json& v, const std::string& where, std::string& out) {
    if (v.is_string()) out = v.get<std::string>();
    else error(where, "expected a string");
  }
  void read(const nlohmann::json& v, const std::string& where, bool& out) {
    if (v.is_boolean()) out = v.get<bool>();
    else error(where, "expected a boolean");
  }
  void read(const nlohmann::json& v, const std::string& where, double& out) {
    if (v.is_number()) out = v.get<double>();
    else error(where, "expected a number");
  }
  void read(const nlohmann::json& v, const std::string& where, std::int64_t& out) {
    if (v.is_number_integer()) out = v.get<std::int64_t>();
    else error(where, "expected an integer");
  }
  void read(const nlohmann::json& v, const std::string& where, int& out) {
    std::int64_t x = out;
    read(v, where, x);
    out = static_cast<int>(x);
  }
  void read(const nlohmann::json& v, const std::string& where, std::uint64_t& out) {
    if (v.is_number_unsigned()) out = v.get<std::uint64_t>();
    else error(where, "expected a non-negative integer");
  }
  template <typename T>
  void read(const nlohmann::json& v, const std::string& where, PerClass<T>& out) {
    if (!v.is_array() || v.size() != kNumClasses) {
      error(where, "expected an array of 3 numbers");
      return;
    }
    for (int i = 0; i < kNumClasses; ++i) read(v[i], where + "[" + std::to_string(i) + "]", out[i]);
  }

  static std::string join(const std::string& where, std::string_view key) {
    return where.empty() ? std::string(key) : where + "." + std::string(key);
  }
  static std::string index(const std::string& where, std::size_t i) {
    return where + "[" + std::to_string(i) + "]";
  }

 private:
  ValidationErrors& errs_;
};

inline std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline Scenario from_json(const nlohmann::json& j, ValidationErrors& errs) {
  Reader r(errs);
  Scenario s;
  if (!r.object(j, "", {"name", "sim", "topology", "bam", "orchestrator", "aggregators", "cross_traffic", "events"})) {
    return s;
  }
  r.get(j, "", "name", s.name, false);

  if (j.contains("sim") && r.object(j["sim"], "sim", {"tick_us", "seed", "metadata_interval_ticks", "ingest_window_ticks"})) {
    const auto& sj = j["sim"];
    std::int64_t tick = s.sim.tick.count();
    r.get(sj, "sim", "tick_us", tick, false);
    s.sim.tick = Duration{tick};
    r.get(sj, "sim", "seed", s.sim.seed, false);
    r.get(sj, "sim", "metadata_interval_ticks", s.sim.metadata_interval_ticks, false);
    r.get(sj, "sim", "ingest_window_ticks", s.sim.ingest_window_ticks, false);
  }

  if (!j.contains("topology")) {
    r.error("topology", "missing field");
  } else if (r.object(j["topology"], "topology", {"nodes", "links", "routes"})) {
    const auto& tj = j["topology"];
    if (const auto* a = r.array(tj, "topology", "nodes")) {
      for (std::size_t i = 0; i < a->size(); ++i) {
        const auto w = Reader::index("topology.nodes", i);
        if (!r.object((*a)[i], w, {"id", "kind"})) continue;
        Node n;
        std::string kind;
        r.get((*a)[i], w, "id", n.id, true);
        r.get((*a)[i], w, "kind", kind, true);
        if (auto k = node_kind_from_string(kind)) n.kind = *k;
        else if (!kind.empty()) r.error(w + ".kind", "unknown node kind '" + kind + "'");
        s.topology.nodes.push_back(std::move(n));
      }
    }
    if (const auto* a = r.array(tj, "topology", "links")) {
      for (std::size_t i = 0; i < a->size(); ++i) {
        const auto w = Reader::index("topology.links", i);
        if (!r.object((*a)[i], w, {"id", "a", "b", "capacity"})) continue;
        Link l;
        r.get((*a)[i], w, "id", l.id, true);
        r.get((*a)[i], w, "a", l.a, true);
        r.get((*a)[i], w, "b", l.b, true);
        r.get((*a)[i], w, "capacity", l.capacity, true);
        s.topology.links.push_back(std::move(l));
      }
    }
    if (const auto* a = r.array(tj, "topology", "routes")) {
      for (std::size_t i = 0; i < a->size(); ++i) {
        const auto w = Reader::index("topology.routes", i);
        if (!r.object((*a)[i], w, {"src", "dst", "links"})) continue;
        Route rt;
        r.get((*a)[i], w, "src", rt.src, true);
        r.get((*a)[i], w, "dst", rt.dst, true);
        if (const auto* ls = r.array((*a)[i], w, "links")) {
          for (std::size_t k = 0; k < ls->size(); ++k) {
            std::string id;
            r.read((*ls)[k], Reader::index(w + ".links", k), id);
            rt.links.push_back(std::move(id));
          }
        }
        s.topology.routes.push_back(std::move(rt));
      }
    }
  }

  if (j.contains("bam") && r.object(j["bam"], "bam", {"devolution", "links"})) {
    const auto& bj = j["bam"];
    r.get(bj, "bam", "devolution", s.bam.devolution, false);
    if (bj.contains("links")) {
      if (!bj["links"].is_object()) {
        r.error("bam.links", "expected an object");
      } else {
        for (const auto& [id, cj] : bj["links"].items()) {
          const std::string w = "bam.links." + id;
          if (!r.object(cj, w, {"model", "bc"})) continue;
          bam::BandwidthConstraints c;
          std::string model;
          r.get(cj, w, "model", model, true);
          if (auto m = bam::model_from_string(model)) c.model = *m;
          else if (!model.empty()) r.error(w + ".model", "unknown model '" + model + "'");
          r.get(cj, w, "bc", c.bc, true);
          s.bam.links[id] = c;
        }
      }
    }
  }

  if (j.contains("orchestrator") &&
      r.object(j["orchestrator"], "orchestrator", {"total_budget", "class_split", "buffer_threshold", "recompute"})) {
    const auto& oj = j["orchestrator"];
    auto& o = s.orchestrator;
    r.get(oj, "orchestrator", "total_budget", o.total_budget, false);
    r.get(oj, "orchestrator", "class_split", o.class_split, false);
    r.get(oj, "orchestrator", "buffer_threshold", o.buffer_threshold, false);
    if (oj.contains("recompute") && r.object(oj["recompute"], "orchestrator.recompute", {"kind", "interval_ticks"})) {
      const auto& rj = oj["recompute"];
      std::string kind;
      r.get(rj, "orchestrator.recompute", "kind", kind, true);
      if (kind == "on_every_metadata") o.recompute.kind = orch::RecomputePolicy::Kind::OnEveryMetadata;
      else if (kind == "interval") o.recompute.kind = orch::RecomputePolicy::Kind::Interval;
      else if (!kind.empty()) r.error("orchestrator.recompute.kind", "unknown policy '" + kind + "'");
      r.get(rj, "orchestrator.recompute", "interval_ticks", o.recompute.interval_ticks, false);
    }
  }

  if (const auto* a = r.array(j, "", "aggregators")) {
    for (std::size_t i = 0; i < a->size(); ++i) {
      const auto w = Reader::index("aggregators", i);
      const auto& aj = (*a)[i];
      if (!r.object(aj, w, {"id", "topics", "buffer", "fallback_rates"})) continue;
      AggregatorSpec spec;
      r.get(aj, w, "id", spec.id, true);
      if (const auto* ts = r.array(aj, w, "topics")) {
        for (std::size_t k = 0; k < ts->size(); ++k) {
          const auto tw = Reader::index(w + ".topics", k);
          const auto& tj = (*ts)[k];
          if (!r.object(tj, tw, {"name", "rate", "msg_size", "phase", "jitter"})) continue;
          TopicConfig t;
          r.get(tj, tw, "name", t.name, true);
          r.get(tj, tw, "rate", t.rate, true);
          r.get(tj, tw, "msg_size", t.msg_size, false);
          r.get(tj, tw, "phase", t.phase, false);
          r.get(tj, tw, "jitter", t.jitter, false);
          spec.topics.push_back(std::move(t));
        }
      }
      if (aj.contains("buffer") &&
          r.object(aj["buffer"], w + ".buffer", {"capacity_per_class", "overflow", "capacity_override"})) {
        const auto& bj = aj["buffer"];
        r.get(bj, w + ".buffer", "capacity_per_class", spec.buffer.capacity_per_class, false);
        std::string ov;
        r.get(bj, w + ".buffer", "overflow", ov, false);
        if (auto o = agg::overflow_from_string(ov)) spec.buffer.overflow = *o;
        else if (!ov.empty()) r.error(w + ".buffer.overflow", "unknown overflow policy '" + ov + "'");
        if (bj.contains("capacity_override")) {
          PerClass<Bytes> c{};
          r.read(bj["capacity_override"], w + ".buffer.capacity_override", c);
          spec.buffer.capacity_override = c;
        }
      }
      if (aj.contains("fallback_rates")) {
        PerClass<Bandwidth> f{};
        r.read(aj["fallback_rates"], w + ".fallback_rates", f);
        spec.fallback_rates = f;
      }
      s.aggregators.push_back(std::move(spec));
    }
  }

  if (const auto* a = r.array(j, "", "cross_traffic", false)) {
    for (std::size_t i = 0; i < a->size(); ++i) {
      const auto w = Reader::index("cross_traffic", i);
      const auto& xj = (*a)[i];
      if (!r.object(xj, w, {"src", "dst", "rate", "profile", "on_ticks", "off_ticks"})) continue;
      CrossTrafficSpec x;
      r.get(xj, w, "src", x.src, true);
      r.get(xj, w, "dst", x.dst, true);
      r.get(xj, w, "rate", x.rate, true);
      std::string prof;
      r.get(xj, w, "profile", prof, false);
      if (prof == "on_off") x.profile = CrossTrafficSpec::Profile::OnOff;
      else if (!prof.empty() && prof != "cbr") r.error(w + ".profile", "unknown profile '" + prof + "'");
      r.get(xj, w, "on_ticks", x.on_ticks, false);
      r.get(xj, w, "off_ticks", x.off_ticks, false);
      s.cross_traffic.push_back(std::move(x));
    }
  }

  if (const auto* a = r.array(j, "", "events")) {
    for (std::size_t i = 0; i < a->size(); ++i) {
      const auto w = Reader::index("events", i);
      const auto& ej = (*a)[i];
      if (!r.object(ej, w, {"at", "kind", "consumer", "aggregator", "topic", "qos", "marker"})) continue;
      ScenarioEvent e;
      r.get(ej, w, "at", e.at, true);
      std::string kind;
      r.get(ej, w, "kind", kind, true);
      if (auto k = event_kind_from_string(kind)) e.kind = *k;
      else if (!kind.empty()) r.error(w + ".kind", "unknown event kind '" + kind + "'");
      const bool sub = e.kind == ScenarioEvent::Kind::Subscribe || e.kind == ScenarioEvent::Kind::Unsubscribe;
      r.get(ej, w, "consumer", e.consumer, sub);
      r.get(ej, w, "aggregator", e.aggregator, sub);
      r.get(ej, w, "topic", e.topic, sub);
      int q = 0;
      r.get(ej, w, "qos", q, e.kind == ScenarioEvent::Kind::Subscribe);
      if (q < 0 || q > 2) r.error(w + ".qos", "QoS level must be 0, 1 or 2");
      else e.qos = qos_from_level(q);
      r.get(ej, w, "marker", e.marker, false);
      s.events.push_back(std::move(e));
    }
  }
  return s;
}

}  // namespace detail

/// Parses and validates a scenario document. Omitted per-link BAM
/// constraints are filled with the proportional ATCS default.
inline std::variant<Scenario, ValidationErrors> parse_scenario_text(std::string_view text) {
  ValidationErrors errs;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    errs.push_back({ValidationError::Kind::Syntax,
                    "line " + std::to_string(line) + ", column " + std::to_string(col), e.what()});
    return errs;
  }
  Scenario s = detail::from_json(j, errs);
  if (!errs.empty()) return errs;
  apply_defaults(s);
  errs = validate_scenario(s);
  if (!errs.empty()) return errs;
  return s;
}

inline std::variant<Scenario, ValidationErrors> parse_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    return ValidationErrors{{ValidationError::Kind::InvalidField, path, "cannot open file"}};
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str());
}

// ---------------------------------------------------------------------------
// Built-in scenario

/// Three gateway aggregators behind a shared switch, two consumers and a
/// background traffic pair. One aggregator carries a topic a hundred times
/// heavier than the others, which the second consumer subscribes to at the
/// highest QoS.
inline Scenario build_paper_poc() {
  Scenario s;
  s.name = "paper-poc";
  constexpr Bandwidth kCap = 1'000'000;
  auto& t = s.topology;
  using NK = NodeKind;
  t.nodes = {{"ag1", NK::Aggregator}, {"ag2", NK::Aggregator}, {"ag3", NK::Aggregator},
             {"c1", NK::Consumer},    {"c2", NK::Consumer},    {"orch", NK::Orchestrator},
             {"s1", NK::Switch},      {"s2", NK::Switch},      {"tg1", NK::TrafficGen},
             {"tg2", NK::TrafficGen}};
  t.links = {{"l-ag1-s1", "ag1", "s1", kCap}, {"l-ag2-s1", "ag2", "s1", kCap}, {"l-ag3-s1", "ag3", "s1", kCap},
             {"l-tg1-s1", "tg1", "s1", kCap}, {"l-s1-s2", "s1", "s2", kCap},   {"l-c1-s2", "c1", "s2", kCap},
             {"l-c2-s2", "c2", "s2", kCap},   {"l-orch-s2", "orch", "s2", kCap}, {"l-tg2-s2", "tg2", "s2", kCap}};
  for (const char* a : {"ag1", "ag2", "ag3"}) {
    for (const char* c : {"c1", "c2"}) {
      t.routes.push_back({a, c, {std::string("l-") + a + "-s1", "l-s1-s2", std::string("l-") + c + "-s2"}});
    }
  }
  t.routes.push_back({"tg1", "tg2", {"l-tg1-s1", "l-s1-s2", "l-tg2-s2"}});

  s.orchestrator = orch::OrchestratorConfig{};
  for (const char* a : {"ag1", "ag2", "ag3"}) {
    AggregatorSpec spec;
    spec.id = a;
    spec.topics = {{"t1", 5'000, 500, 0, 0.0}, {"t2", 5'000, 500, 0, 0.0}, {"t3", 5'000, 500, 0, 0.0}};
    if (spec.id == "ag1") spec.topics.push_back({"t4", 500'000, 500, 0, 0.0});
    spec.buffer.capacity_per_class = 1'000'000;
    spec.buffer.overflow = agg::Overflow::DropOldest;
    s.aggregators.push_back(std::move(spec));
  }
  s.cross_traffic.push_back({"tg1", "tg2", 400'000, CrossTrafficSpec::Profile::Cbr, 0, 0});

  using EK = ScenarioEvent::Kind;
  s.events.push_back({0, EK::StartHosts, "", "", "", QosClass::Insensitive, "hosts_startup"});
  for (const char* a : {"ag1", "ag2", "ag3"}) {
    s.events.push_back({100, EK::Subscribe, "c1", a, "t1", QosClass::Sensitive, "client1_subscribes"});
  }
  for (const char* a : {"ag1", "ag2", "ag3"}) {
    s.events.push_back({600, EK::Subscribe, "c2", a, "t1", QosClass::Priority, "client2_subscribes"});
  }
  s.events.push_back({600, EK::Subscribe, "c2", "ag1", "t4", QosClass::Priority, "client2_subscribes"});
  s.events.push_back({1800, EK::End, "", "", "", QosClass::Insensitive, "end_of_scenario"});
  apply_defaults(s);
  return s;
}

}  // namespace psiot::sim
