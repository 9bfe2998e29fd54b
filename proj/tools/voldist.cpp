#include <algorithm>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "voldist/data.hpp"
#include "voldist/errors.hpp"
#include "voldist/experiment.hpp"

namespace {

int exit_code_for(voldist::ErrorCategory category) {
  using voldist::ErrorCategory;
  switch (category) {
    case ErrorCategory::dimension: return 10;
    case ErrorCategory::domain: return 11;
    case ErrorCategory::contract: return 12;
    case ErrorCategory::parse: return 13;
    case ErrorCategory::data: return 14;
    case ErrorCategory::format: return 15;
    case ErrorCategory::config: return 16;
    case ErrorCategory::io: return 17;
    case ErrorCategory::divergence: return 18;
    case ErrorCategory::insufficient_history: return 19;
  }
  return 1;
}

std::string default_out_dir() {
  const char* env = std::getenv("VOLDIST_OUT_DIR");
  return (env != nullptr && *env != '\0') ? std::string(env) : std::string("./out");
}

nlohmann::json load_config_json(const std::string& path) {
  if (path.empty()) return voldist::ExperimentConfig{}.to_json();
  std::ifstream is(path);
  if (!is) throw voldist::IoError("cannot open config '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw voldist::FormatError("config '" + path + "' is not valid JSON");
  return j;
}

// Overrides use dotted or slash-separated paths into the config JSON, e.g.
// --set training.max_steps=500 or --set protocol.seeds=[0,1,2]. The value is
// parsed as a JSON literal when possible, otherwise taken as a string.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& sets) {
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw voldist::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    std::replace(key.begin(), key.end(), '.', '/');
    if (key.front() != '/') key.insert(key.begin(), '/');
    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    try {
      config[nlohmann::json::json_pointer(key)] = std::move(parsed);
    } catch (const nlohmann::json::exception& e) {
      throw voldist::ConfigError("--set cannot apply '" + kv + "': " + e.what());
    }
  }
}

nlohmann::json load_json_file(const std::string& path, const char* what) {
  std::ifstream is(path);
  if (!is) throw voldist::IoError(std::string("cannot open ") + what + " '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) {
    throw voldist::FormatError(std::string(what) + " '" + path + "' is not valid JSON");
  }
  return j;
}

int run(int argc, char** argv) {
  CLI::App app{"Probabilistic trading-volume forecasting with distributional distillation"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = default_out_dir();
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--out", out_dir, "output directory (default $VOLDIST_OUT_DIR or ./out)");
  app.add_option("--set", sets, "config override, section.key=value (repeatable)");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic OHLCV CSV");
  std::string gen_output = "synthetic.csv";
  gen->add_option("--output", gen_output, "CSV destination path");

  auto* teach = app.add_subcommand("train-teacher", "train and checkpoint the teacher");
  auto* distill = app.add_subcommand("distill", "run the configured methods end to end");
  auto* grid = app.add_subcommand("grid", "distill with lambda grid search enabled");
  auto* sweep = app.add_subcommand("sweep", "low-resource fraction sweep");

  auto* rep = app.add_subcommand("report", "re-emit report files from an existing report.json");
  std::string report_input;
  rep->add_option("--input", report_input, "report.json path (default <out>/report.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  nlohmann::json config_json = load_config_json(config_path);
  apply_overrides(config_json, sets);
  voldist::ExperimentConfig cfg = voldist::ExperimentConfig::from_json(config_json);

  if (gen->parsed()) {
    const auto records = voldist::synth_generate(cfg.synth);
    voldist::write_csv(gen_output, records);
    std::cout << "wrote " << records.size() << " records to " << gen_output << '\n';
    return 0;
  }

  voldist::ExperimentReport report;
  if (rep->parsed()) {
    const std::string input = report_input.empty() ? out_dir + "/report.json" : report_input;
    report = voldist::report_from_json(load_json_file(input, "report"));
  } else {
    voldist::PreparedData data = voldist::prepare_data(cfg);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
    if (teach->parsed()) {
      cfg.methods = {voldist::Method::teacher};
      report = voldist::run_experiment(cfg, data, out_dir);
    } else if (distill->parsed()) {
      report = voldist::run_experiment(cfg, data, out_dir);
    } else if (grid->parsed()) {
      cfg.use_grid = true;
      report = voldist::run_experiment(cfg, data, out_dir);
    } else if (sweep->parsed()) {
      report = voldist::low_resource_sweep(cfg, data, out_dir);
    } else {
      throw voldist::ContractError("no subcommand selected");
    }
  }

  voldist::emit_report(report, out_dir);
  std::cout << report.runs.size() << " runs -> " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const voldist::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
}
