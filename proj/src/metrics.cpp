#include "fedbeat/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <omp.h>

#include "fedbeat/errors.hpp"

namespace fedbeat::metrics {

int predict(const nn::ParamVector& w, std::span<const double> x) {
  // Softmax is strictly monotone, so the argmax of the logits suffices.
  const auto z = nn::logits(w, x);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

std::size_t count_correct_serial(const nn::ParamVector& w, std::span<const data::Sample> test) {
  std::size_t correct = 0;
  for (const auto& s : test) correct += predict(w, s.x) == s.clean_label ? 1 : 0;
  return correct;
}

std::size_t count_correct_omp(const nn::ParamVector& w, std::span<const data::Sample> test, int workers) {
  const auto n = static_cast<std::ptrdiff_t>(test.size());
  long long correct = 0;
  bool bad_input = false;
#pragma omp parallel for reduction(+ : correct) reduction(|| : bad_input) num_threads(std::max(1, workers))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& s = test[static_cast<std::size_t>(i)];
    if (s.x.size() != w.spec.input_dim) {
      bad_input = true;
      continue;
    }
    correct += predict(w, s.x) == s.clean_label ? 1 : 0;
  }
  if (bad_input) throw InputError("evaluate: feature dimension does not match the model");
  return static_cast<std::size_t>(correct);
}

double evaluate(const nn::ParamVector& w, std::span<const data::Sample> test) {
  if (test.empty()) throw InputError("evaluate: empty test set");
  const int workers = omp_get_max_threads();
  return static_cast<double>(count_correct_omp(w, test, workers)) / static_cast<double>(test.size());
}

std::optional<double> pseudo_label_accuracy(std::span<const data::ClientDataset> extracted) {
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const auto& c : extracted) {
    for (const auto& s : c.samples) {
      if (!s.pseudo_label) continue;
      ++total;
      correct += *s.pseudo_label == s.clean_label ? 1 : 0;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary out;
  out.count = values.size();
  if (values.empty()) return out;
  // Welford: identical values give exactly that mean and a zero std
  double mean = 0.0;
  double m2 = 0.0;
  double n = 0.0;
  for (double v : values) {
    n += 1.0;
    const double delta = v - mean;
    mean += delta / n;
    m2 += delta * (v - mean);
  }
  out.mean = mean;
  if (values.size() >= 2) out.std = std::sqrt(m2 / (n - 1.0));
  return out;
}

std::map<std::string, MetricSummary> aggregate_seeds(std::span<const RunReport> reports) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : reports) {
    values["final_accuracy"].push_back(r.final_accuracy);
    if (r.step1_accuracy) values["step1_accuracy"].push_back(*r.step1_accuracy);
    if (r.pseudo_label_accuracy) values["pseudo_label_accuracy"].push_back(*r.pseudo_label_accuracy);
    if (r.extracted_count) values["extracted_count"].push_back(static_cast<double>(*r.extracted_count));
  }
  std::map<std::string, MetricSummary> out;
  for (const auto& [name, v] : values) out[name] = summarize(v);
  return out;
}

}  // namespace fedbeat::metrics
