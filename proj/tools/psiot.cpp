// psiot: run, validate and export pub/sub IoT orchestration scenarios.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "psiot/netsim.hpp"
#include "psiot/report.hpp"
#include "psiot/scenario_io.hpp"

namespace {

using psiot::sim::Scenario;

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kInternal = 2;

void print_errors(const psiot::ValidationErrors& errs) {
  for (const auto& e : errs) std::fprintf(stderr, "error: %s\n", psiot::describe(e).c_str());
}

std::optional<Scenario> load(const std::string& path, const std::string& builtin) {
  if (!builtin.empty()) {
    if (builtin != "paper-poc") {
      std::fprintf(stderr, "error: unknown builtin scenario '%s'\n", builtin.c_str());
      return std::nullopt;
    }
    return psiot::sim::build_paper_poc();
  }
  auto parsed = psiot::sim::parse_scenario(path);
  if (auto* errs = std::get_if<psiot::ValidationErrors>(&parsed)) {
    print_errors(*errs);
    return std::nullopt;
  }
  return std::get<Scenario>(std::move(parsed));
}

struct RunArgs {
  std::string scenario;
  std::string builtin;
  std::string manifest;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string format = "csv";
  bool summary = false;
};

// Reads scenario, seed and format back out of a run manifest.
bool load_manifest(RunArgs& a, std::optional<Scenario>& sc) {
  std::ifstream in(a.manifest);
  if (!in) {
    std::fprintf(stderr, "error: cannot open %s\n", a.manifest.c_str());
    return false;
  }
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s: %s\n", a.manifest.c_str(), e.what());
    return false;
  }
  if (!m.is_object() || !m.contains("scenario") || !m.contains("seed") || !m["seed"].is_number_unsigned()) {
    std::fprintf(stderr, "error: %s is not a run manifest\n", a.manifest.c_str());
    return false;
  }
  auto parsed = psiot::sim::parse_scenario_text(m["scenario"].dump());
  if (auto* errs = std::get_if<psiot::ValidationErrors>(&parsed)) {
    print_errors(*errs);
    return false;
  }
  sc = std::get<Scenario>(std::move(parsed));
  if (!a.seed) a.seed = m["seed"].get<std::uint64_t>();
  if (m.contains("format") && m["format"].is_string()) a.format = m["format"].get<std::string>();
  return true;
}

int cmd_run(RunArgs a) {
  const int sources = !a.scenario.empty() + !a.builtin.empty() + !a.manifest.empty();
  if (sources != 1) {
    std::fprintf(stderr, "error: give exactly one of SCENARIO, --builtin or --manifest\n");
    return kInvalid;
  }
  std::optional<Scenario> sc;
  if (!a.manifest.empty()) {
    if (!load_manifest(a, sc)) return kInvalid;
  } else {
    sc = load(a.scenario, a.builtin);
    if (!sc) return kInvalid;
  }
  psiot::report::Format fmt;
  if (a.format == "csv") fmt = psiot::report::Format::Csv;
  else if (a.format == "jsonl") fmt = psiot::report::Format::Jsonl;
  else {
    std::fprintf(stderr, "error: unknown format '%s'\n", a.format.c_str());
    return kInvalid;
  }
  const std::uint64_t seed = a.seed.value_or(sc->sim.seed);
  sc->sim.seed = seed;

  try {
    const auto result = psiot::sim::run(*sc, seed);
    psiot::report::write_outputs(a.out, *sc, seed, fmt, result);
    if (a.summary) std::cout << psiot::report::summary(*sc, result).dump(2) << "\n";
    if (result.fatal) {
      for (const auto* r : result.log.of_type("fatal")) {
        std::fprintf(stderr, "internal assertion at tick %lld: %s\n", static_cast<long long>(r->tick),
                     r->data.dump().c_str());
      }
      return kInternal;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternal;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pub/sub IoT aggregation and bandwidth orchestration simulator"};
  app.set_version_flag("--version", psiot::report::kToolVersion);
  app.require_subcommand(1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Run a scenario and write metrics, events and a manifest");
  run->add_option("scenario", ra.scenario, "Scenario JSON file");
  run->add_option("--builtin", ra.builtin, "Built-in scenario name (paper-poc)");
  run->add_option("--manifest", ra.manifest, "Repeat the run recorded in a manifest");
  run->add_option("--seed", ra.seed, "RNG seed (overrides the scenario's)");
  run->add_option("--out", ra.out, "Output directory")->capture_default_str();
  run->add_option("--format", ra.format, "Metrics format: csv or jsonl")->capture_default_str();
  run->add_flag("--summary", ra.summary, "Print a JSON summary to stdout");

  std::string vpath;
  auto* validate = app.add_subcommand("validate", "Check a scenario file and list every problem");
  validate->add_option("scenario", vpath, "Scenario JSON file")->required();

  std::string ebuiltin;
  std::string eout;
  auto* exp = app.add_subcommand("export", "Write a built-in scenario as JSON");
  exp->add_option("--builtin", ebuiltin, "Built-in scenario name (paper-poc)")->required();
  exp->add_option("--out", eout, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  if (*run) return cmd_run(ra);
  if (*validate) {
    auto sc = load(vpath, "");
    if (!sc) return kInvalid;
    std::printf("%s: ok (%zu aggregators, %zu links, %zu events)\n", vpath.c_str(), sc->aggregators.size(),
                sc->topology.links.size(), sc->events.size());
    return kOk;
  }
  if (*exp) {
    auto sc = load("", ebuiltin);
    if (!sc) return kInvalid;
    const std::string text = psiot::sim::serialize(*sc);
    if (eout.empty()) {
      std::cout << text;
    } else {
      try {
        psiot::report::write_file(eout, text);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kInternal;
      }
    }
    return kOk;
  }
  return kInvalid;
}
