// Experiment runner for the federated noisy-label simulator.
//
//   fedbeat gen-data         --config C [--out PATH] [--seeds S]
//   fedbeat run              --config C [--out PATH] [--seeds "1,2,3"] [--workers N]
//   fedbeat ablate-threshold --config C [--taus "0.5,0.65,0.8"] [--out PATH]
//   fedbeat ablate-ensemble  --config C [--out PATH]
//   fedbeat eval             --results PATH | --config C

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedbeat/errors.hpp"
#include "fedbeat/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedbeat;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string seeds;
  int workers = 1;
};

experiment::ExperimentConfig load(const Common& c) {
  auto cfg = experiment::load_config(c.config);
  if (!c.seeds.empty()) cfg.seeds = experiment::parse_seed_list(c.seeds);
  if (!c.out.empty()) cfg.output = c.out;
  return cfg;
}

std::vector<double> parse_taus(const std::string& text) {
  std::vector<double> taus;
  std::string item;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ',') {
      try {
        std::size_t used = 0;
        taus.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw ConfigError("--taus: bad threshold '" + item + "'");
      }
      item.clear();
    } else if (text[i] != ' ') {
      item += text[i];
    }
  }
  return taus;
}

int cmd_gen_data(const Common& c) {
  const auto cfg = load(c);
  const fs::path out = c.out.empty() ? fs::path("dataset.txt") : fs::path(c.out);
  experiment::generate_dataset_files(cfg, cfg.seeds.front(), out);
  std::cout << "wrote " << out.string() << ", " << out.string() << ".test, " << out.string() << ".noise.json\n";
  return 0;
}

int cmd_run(const Common& c) {
  const auto cfg = load(c);
  const auto reports = experiment::run_experiment(cfg, c.workers, cfg.output);
  std::cout << experiment::summary_line(experiment::to_string(cfg.method.name), reports) << '\n';
  return 0;
}

int cmd_ablate_threshold(const Common& c, const std::string& taus_text) {
  const auto cfg = load(c);
  const auto rows = experiment::ablate_threshold(cfg, parse_taus(taus_text), c.workers);
  std::vector<std::string> lines;
  for (const auto& r : rows) lines.push_back(experiment::to_json_line(r));
  experiment::append_lines(cfg.output, lines);
  std::cout << experiment::threshold_table(rows);
  return 0;
}

int cmd_ablate_ensemble(const Common& c) {
  const auto cfg = load(c);
  const auto reports = experiment::ablate_ensemble(cfg, c.workers);
  std::vector<std::string> lines;
  for (const auto& r : reports) lines.push_back(experiment::to_json_line(r));
  experiment::append_lines(cfg.output, lines);
  std::cout << experiment::ensemble_table(reports);
  return 0;
}

int cmd_eval(const Common& c, std::string results) {
  if (results.empty()) {
    if (c.config.empty()) throw ConfigError("eval: pass --results PATH or --config PATH");
    results = load(c).output;
  }
  const auto file = experiment::read_results(results);
  if (!file.runs.empty()) std::cout << experiment::summary_table(file.runs);
  if (!file.thresholds.empty()) std::cout << experiment::threshold_table(file.thresholds);
  if (file.runs.empty() && file.thresholds.empty()) std::cout << "no records in " << results << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning under instance-dependent label noise"};
  app.require_subcommand(1);

  Common common;
  std::string taus = "0.5,0.65,0.8";
  std::string results;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", common.config, "Experiment config file");
    if (needs_config) opt->required();
    sub->add_option("--out", common.out, "Output path (overrides run.output)");
    sub->add_option("--seeds", common.seeds, "Comma-separated master seeds (overrides run.seeds)");
    sub->add_option("--workers", common.workers, "Worker threads for client-parallel training")
        ->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a dataset file with its test split and noise sidecar");
  add_common(gen, true);
  auto* run = app.add_subcommand("run", "Run the configured method for every seed");
  add_common(run, true);
  auto* thr = app.add_subcommand("ablate-threshold", "Pseudo-label accuracy / extracted count per tau");
  add_common(thr, true);
  thr->add_option("--taus", taus, "Comma-separated thresholds");
  auto* ens = app.add_subcommand("ablate-ensemble", "Compare pseudo-labelling with and without the ensemble");
  add_common(ens, true);
  auto* ev = app.add_subcommand("eval", "Summarise a results file");
  add_common(ev, false);
  ev->add_option("--results", results, "Results file to summarise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (run->parsed()) return cmd_run(common);
    if (thr->parsed()) return cmd_ablate_threshold(common, taus);
    if (ens->parsed()) return cmd_ablate_ensemble(common);
    if (ev->parsed()) return cmd_eval(common, results);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::failure);
  }
  return static_cast<int>(ExitCode::failure);
}
