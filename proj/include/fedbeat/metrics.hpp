#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedbeat/data.hpp"
#include "fedbeat/nn.hpp"

namespace fedbeat::metrics {

/// Argmax class of the classifier (ties to the lowest index).
int predict(const nn::ParamVector& w, std::span<const double> x);

/// Fraction of samples whose predicted class equals the clean label.
double evaluate(const nn::ParamVector& w, std::span<const data::Sample> test);

/// Reference loop and OpenMP kernel behind evaluate(); both return the exact
/// number of correct predictions.
std::size_t count_correct_serial(const nn::ParamVector& w, std::span<const data::Sample> test);
std::size_t count_correct_omp(const nn::ParamVector& w, std::span<const data::Sample> test, int workers);

/// Fraction of pseudo-labelled samples with pseudo == clean. Absent when
/// nothing was extracted.
std::optional<double> pseudo_label_accuracy(std::span<const data::ClientDataset> extracted);

struct MetricSummary {
  double mean = 0.0;
  std::optional<double> std;  // sample std; absent with fewer than 2 values
  std::size_t count = 0;
};

MetricSummary summarize(std::span<const double> values);

/// Outcome of one method run under one master seed.
struct RunReport {
  std::string method;
  /// Ablation arm, e.g. "w/o ensemble"; empty for plain runs.
  std::string variant;
  std::uint64_t seed = 0;
  /// Canonical text of the experiment config that produced the run.
  std::string config;
  std::size_t num_samples = 0;
  std::optional<double> step1_accuracy;
  std::optional<double> pseudo_label_accuracy;
  std::optional<std::size_t> extracted_count;
  double final_accuracy = 0.0;
  /// Weighted mean local loss per round, one list per training stage.
  std::map<std::string, std::vector<double>> round_loss;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// Mean and sample std of every metric present in the reports, keyed by
/// metric name (final_accuracy, step1_accuracy, pseudo_label_accuracy,
/// extracted_count). A metric absent from every report is omitted.
std::map<std::string, MetricSummary> aggregate_seeds(std::span<const RunReport> reports);

}  // namespace fedbeat::metrics
