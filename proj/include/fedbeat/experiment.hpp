#pragma once

// Experiment configuration, method dispatch and results persistence behind the
// command-line runner.
//
// Config files are sectioned key = value text:
//
//   [dataset]
//   num_classes = 4
//   noise_rate = 0.3
//   [method]
//   name = fedbeat
//   [run]
//   seeds = 1,2,3
//
// Unknown sections or keys are rejected. Results are JSON lines, one record per
// run, appended to the configured output file.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedbeat/data.hpp"
#include "fedbeat/metrics.hpp"
#include "fedbeat/pipeline.hpp"

namespace fedbeat::experiment {

enum class Method { fedbeat, fedavg, fedprox };
enum class PartitionKind { iid, dirichlet };

std::string_view to_string(Method m) noexcept;
std::string_view to_string(PartitionKind p) noexcept;

struct DatasetBlock {
  /// Pre-generated dataset file; empty means generate per seed.
  std::string path;
  /// Test split file; defaults to `<path>.test` when path is set.
  std::string test_path;
  int num_classes = 4;
  std::size_t input_dim = 20;
  std::size_t per_class = 1000;
  std::size_t test_per_class = 500;
  double spread = 2.0;
  double mean_scale = 1.0;
  double noise_rate = 0.3;
  double noise_std = 0.1;
  double noise_sharpness = 5.0;
  PartitionKind partition = PartitionKind::iid;
  int clients = 8;
  double alpha_dir = 1.0;

  friend bool operator==(const DatasetBlock&, const DatasetBlock&) = default;
};

struct MethodBlock {
  Method name = Method::fedbeat;
  std::vector<std::size_t> hidden{128};
  std::size_t batch_size = 4;
  double prox_mu = 0.01;
  double participation = 1.0;

  int warmup_rounds = 15;
  int warmup_epochs = 2;
  double warmup_lr = 0.01;
  int transition_rounds = 40;
  int transition_epochs = 2;
  double transition_lr = 0.01;
  int correction_rounds = 25;
  int correction_epochs = 2;
  double correction_lr = 0.0005;
  int ensemble_size = 10;
  double tau = 0.65;
  bool ensemble = true;

  /// FedAvg / FedProx training length.
  int baseline_rounds = 40;
  int baseline_epochs = 2;
  double baseline_lr = 0.01;

  friend bool operator==(const MethodBlock&, const MethodBlock&) = default;
};

struct ExperimentConfig {
  DatasetBlock dataset;
  MethodBlock method;
  std::vector<std::uint64_t> seeds{1};
  std::string output = "results.jsonl";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Throws ConfigError naming the offending key.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text; parse_config(to_text(c)) == c.
std::string to_text(const ExperimentConfig& cfg);

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

pipeline::FedBeatConfig fedbeat_config(const ExperimentConfig& cfg, int workers);

struct PreparedData {
  data::Federation train;
  std::vector<data::Sample> test;
  /// Seed the label noise was generated with (absent for loaded datasets).
  std::optional<std::uint64_t> noise_seed;
};

/// Generates (or loads) the dataset for one master seed.
PreparedData prepare_data(const DatasetBlock& block, std::uint64_t seed);

/// Fraction of training samples whose noisy label differs from the clean one.
double realized_noise_rate(const data::Federation& fed);

/// Writes the dataset file, `<out>.test` and the `<out>.noise.json` sidecar.
void generate_dataset_files(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out);

metrics::RunReport run_single(const ExperimentConfig& cfg, std::uint64_t seed, int workers);

/// Runs every seed, appends one record per seed to `out` and returns the reports.
std::vector<metrics::RunReport> run_experiment(const ExperimentConfig& cfg, int workers,
                                               const std::filesystem::path& out);

struct ThresholdRow {
  double tau = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> pseudo_label_accuracy;
  std::size_t extracted_count = 0;
  std::size_t num_samples = 0;

  friend bool operator==(const ThresholdRow&, const ThresholdRow&) = default;
};

/// Pseudo-label accuracy and extracted count per tau over fixed warm-up models,
/// rows ordered by (seed, tau).
std::vector<ThresholdRow> ablate_threshold(const ExperimentConfig& cfg, std::vector<double> taus, int workers);

/// "w/o ensemble" (pseudo-labels from mu) and "w/ ensemble" runs per seed,
/// sharing the warm-up.
std::vector<metrics::RunReport> ablate_ensemble(const ExperimentConfig& cfg, int workers);

// Results records.
std::string to_json_line(const metrics::RunReport& r);
std::string to_json_line(const ThresholdRow& r);

struct ResultsFile {
  std::vector<metrics::RunReport> runs;
  std::vector<ThresholdRow> thresholds;
};
ResultsFile read_results(const std::filesystem::path& path);
void append_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

// Text tables.
std::string format_percent(std::optional<double> v);
std::string summary_line(std::string_view label, std::span<const metrics::RunReport> reports);
std::string threshold_table(std::span<const ThresholdRow> rows);
std::string ensemble_table(std::span<const metrics::RunReport> reports);
std::string summary_table(std::span<const metrics::RunReport> reports);

}  // namespace fedbeat::experiment
