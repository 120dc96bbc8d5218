// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything passes).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <tuple>

#include "fedbeat/data.hpp"
#include "fedbeat/experiment.hpp"
#include "fedbeat/metrics.hpp"
#include "fedbeat/nn.hpp"
#include "fedbeat/pipeline.hpp"
#include "fedbeat/protocol.hpp"
#include "oracles.hpp"

using namespace fedbeat;
namespace fs = std::filesystem;
using nn::ModelSpec;
using nn::OutputKind;
using nn::ParamVector;

namespace {

// Pinned tolerances.
constexpr double kFdStep = 1e-5;
constexpr double kFdMaxRelErr = 1e-4;
constexpr int kFdMinInstances = 20;
constexpr double kFdSecondsBudget = 30.0;
constexpr int kSimplexDraws = 1000;
constexpr double kSimplexTol = 1e-6;
constexpr int kIdentityBatches = 100;
constexpr double kIdentityTol = 1e-9;
constexpr int kPosteriorPairs = 100;
constexpr double kPosteriorTol = 1e-12;
constexpr std::size_t kNoiseSamples = 10000;
constexpr double kNoiseTol = 0.02;
constexpr double kDeterminismSecondsBudget = 300.0;
constexpr double kMinGap = 0.03;
constexpr double kGapSecondsBudget = 600.0;
constexpr double kMaxCountDiff = 0.20;
constexpr double kCleanTol = 0.01;
const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

int failures = 0;

void report(const char* id, bool pass, const std::string& what) {
  std::printf("%s %s  %s\n", id, pass ? "PASS" : "FAIL", what.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

ModelSpec random_spec(std::mt19937_64& gen, OutputKind kind) {
  std::uniform_int_distribution<std::size_t> dim(2, 6);
  std::uniform_int_distribution<int> classes(2, 5);
  std::uniform_int_distribution<int> depth(0, 2);
  std::vector<std::size_t> hidden(static_cast<std::size_t>(depth(gen)));
  for (auto& h : hidden) h = dim(gen);
  return ModelSpec{dim(gen), hidden, kind, classes(gen)};
}

// --- AC1 -------------------------------------------------------------------
void ac1_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 gen(101);
  double worst[3] = {0, 0, 0};
  for (int inst = 0; inst < kFdMinInstances; ++inst) {
    auto cspec = random_spec(gen, OutputKind::class_simplex);
    auto tspec = cspec;
    tspec.output_kind = OutputKind::transition;
    const auto w = oracle::random_params(cspec, gen, 0.7);
    const auto theta = oracle::random_params(tspec, gen, 0.7);
    std::uniform_int_distribution<int> label(0, cspec.num_classes - 1);
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 5; ++i) xs.push_back(oracle::random_vector(gen, cspec.input_dim));
    std::vector<nn::Example> batch;
    std::vector<nn::TransitionExample> tbatch;
    for (const auto& x : xs) {
      batch.push_back({x, label(gen)});
      tbatch.push_back({x, label(gen), label(gen)});
    }
    auto check = [&](int slot, const std::vector<double>& analytic, const ParamVector& at,
                     const std::function<double(const ParamVector&)>& loss) {
      worst[slot] = std::max(worst[slot], oracle::max_rel_error(analytic, oracle::finite_diff(at, loss, kFdStep)));
    };
    check(0, nn::ce_loss_and_grad(batch, w).grad, w,
          [&](const ParamVector& p) { return nn::ce_loss_and_grad(batch, p).loss; });
    check(1, nn::transition_loss_and_grad(tbatch, theta).grad, theta,
          [&](const ParamVector& p) { return nn::transition_loss_and_grad(tbatch, p).loss; });
    check(2, nn::correction_loss_and_grad(batch, w, theta).grad, w,
          [&](const ParamVector& p) { return nn::correction_loss_and_grad(batch, p, theta).loss; });
  }
  const double secs = seconds_since(t0);
  const bool pass = *std::max_element(worst, worst + 3) < kFdMaxRelErr && secs < kFdSecondsBudget;
  report("AC1", pass,
         fmt("gradients vs central differences (h=%g, %d instances per loss): max rel err ce %.2e, transition %.2e, "
             "correction %.2e (limit %g), %.1fs (limit %.0fs)",
             kFdStep, kFdMinInstances, worst[0], worst[1], worst[2], kFdMaxRelErr, secs, kFdSecondsBudget));
}

// --- AC2 -------------------------------------------------------------------
void ac2_simplex() {
  std::mt19937_64 gen(202);
  double worst_sum = 0.0;
  bool in_range = true;
  auto check = [&](std::span<const double> v) {
    double s = 0.0;
    for (double p : v) {
      in_range = in_range && p >= 0.0 && p <= 1.0;
      s += p;
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  };
  for (int draw = 0; draw < kSimplexDraws; ++draw) {
    auto cspec = random_spec(gen, OutputKind::class_simplex);
    auto tspec = cspec;
    tspec.output_kind = OutputKind::transition;
    const auto w = oracle::random_params(cspec, gen, 2.0);
    const auto theta = oracle::random_params(tspec, gen, 2.0);
    const auto x = oracle::random_vector(gen, cspec.input_dim, 3.0);
    const auto p = nn::classifier_forward(x, w);
    const auto t = nn::transition_forward(x, theta);
    check(p);
    for (int i = 0; i < cspec.num_classes; ++i) check(t.row(i));
    check(nn::noisy_posterior(t, p));
  }
  report("AC2", worst_sum <= kSimplexTol && in_range,
         fmt("simplex invariants over %d draws: max |sum-1| %.2e (limit %g), entries in [0,1]: %s", kSimplexDraws,
             worst_sum, kSimplexTol, in_range ? "yes" : "no"));
}

// --- AC3 -------------------------------------------------------------------
void ac3_identity() {
  std::mt19937_64 gen(303);
  double worst_loss = 0.0;
  double worst_grad = 0.0;
  for (int b = 0; b < kIdentityBatches; ++b) {
    const auto cspec = random_spec(gen, OutputKind::class_simplex);
    auto tspec = cspec;
    tspec.output_kind = OutputKind::transition;
    const auto w = oracle::random_params(cspec, gen, 1.0);
    const auto theta = nn::identity_transition_params(tspec);
    std::uniform_int_distribution<int> label(0, cspec.num_classes - 1);
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 8; ++i) xs.push_back(oracle::random_vector(gen, cspec.input_dim, 2.0));
    std::vector<nn::Example> batch;
    for (const auto& x : xs) batch.push_back({x, label(gen)});
    const auto corr = nn::correction_loss_and_grad(batch, w, theta);
    const auto ce = nn::ce_loss_and_grad(batch, w);
    worst_loss = std::max(worst_loss, std::abs(corr.loss - ce.loss));
    for (std::size_t j = 0; j < ce.grad.size(); ++j)
      worst_grad = std::max(worst_grad, std::abs(corr.grad[j] - ce.grad[j]));
  }
  report("AC3", worst_loss <= kIdentityTol,
         fmt("identity transition: |correction - ce| max %.2e over %d batches (limit %g); gradient gap %.2e",
             worst_loss, kIdentityBatches, kIdentityTol, worst_grad));
}

// --- AC4 -------------------------------------------------------------------
void ac4_posterior() {
  std::mt19937_64 gen(404);
  std::uniform_int_distribution<std::size_t> classes(2, 10);
  double worst = 0.0;
  for (int i = 0; i < kPosteriorPairs; ++i) {
    const std::size_t c = classes(gen);
    const auto tm = oracle::random_row_stochastic(gen, c);
    const auto p = oracle::random_simplex(gen, c);
    nn::TransitionMatrix t(static_cast<int>(c));
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) t(static_cast<int>(a), static_cast<int>(b)) = tm[a][b];
    const auto got = nn::noisy_posterior(t, p);
    const auto want = oracle::noisy_posterior(tm, p);
    for (std::size_t j = 0; j < c; ++j) worst = std::max(worst, std::abs(got[j] - want[j]));
  }
  report("AC4", worst <= kPosteriorTol,
         fmt("noisy posterior vs brute force over %d (T, p) pairs: max abs err %.2e (limit %g)", kPosteriorPairs,
             worst, kPosteriorTol));
}

// --- AC5 -------------------------------------------------------------------
void ac5_noise() {
  const experiment::DatasetBlock block;  // desk defaults
  auto base = data::generate_blobs(block.num_classes, block.input_dim, kNoiseSamples / 4, block.spread, 505);
  std::string detail;
  bool pass = base.size() == kNoiseSamples;
  for (double target : {0.30, 0.50}) {
    auto s = base;
    data::corrupt_idn(s, data::NoiseConfig{target, block.noise_std, 5050, block.noise_sharpness}, block.num_classes);
    std::size_t flipped = 0;
    for (const auto& v : s) flipped += v.noisy_label != v.clean_label;
    const double rate = static_cast<double>(flipped) / static_cast<double>(s.size());
    pass = pass && std::abs(rate - target) <= kNoiseTol;
    detail += fmt("target %.2f -> %.4f; ", target, rate);
  }
  report("AC5", pass, fmt("realized flip fraction on %zu samples: %s(tolerance ±%g)", kNoiseSamples, detail.c_str(),
                          kNoiseTol));
}

// --- AC6 -------------------------------------------------------------------
void ac6_aggregation() {
  std::mt19937_64 gen(606);
  const ModelSpec spec{6, {5}, OutputKind::class_simplex, 3};
  const auto w = oracle::random_params(spec, gen);

  // sigma of identical locals
  const std::vector<pipeline::LocalModel> locals{{0, w, 10}, {1, w, 25}, {2, w, 1}};
  const auto sigma = pipeline::compute_sigma(locals, w);
  const bool sigma_zero = std::all_of(sigma.values.begin(), sigma.values.end(), [](double v) { return v == 0.0; });

  // identical models
  const std::vector<fl::WeightedModel> same{{&w, 3}, {&w, 11}, {&w, 7}};
  const bool identity = fl::aggregate(same) == w;

  // zero-weight clients, at the aggregate level and through a step-2 run
  const auto a = oracle::random_params(spec, gen), b = oracle::random_params(spec, gen),
             junk = oracle::random_params(spec, gen, 100.0);
  const std::vector<fl::WeightedModel> without{{&a, 4}, {&b, 9}};
  const std::vector<fl::WeightedModel> with{{&junk, 0}, {&a, 4}, {&junk, 0}, {&b, 9}};
  bool zero_weight = fl::aggregate(with) == fl::aggregate(without);

  auto samples = data::generate_blobs(3, 6, 40, 1.5, 66);
  data::corrupt_idn(samples, data::NoiseConfig{0.3, 0.1, 66}, 3);
  pipeline::ExtractedDataset ext;
  for (auto c : data::partition_iid(samples, 3, 66, 3)) {
    for (auto& s : c.samples) {
      s.pseudo_label = s.clean_label;
      s.confidence = 1.0;
    }
    ext.clients.push_back(std::move(c));
  }
  auto padded = ext;
  padded.clients.insert(padded.clients.begin() + 1, data::ClientDataset{7, {}});
  pipeline::FedBeatConfig cfg;
  cfg.transition = {5, 1, 0.05};
  cfg.hidden_dims = {8};
  zero_weight = zero_weight && pipeline::step2_estimate_transition(ext, 6, 3, cfg, 6) ==
                                   pipeline::step2_estimate_transition(padded, 6, 3, cfg, 6);

  report("AC6", sigma_zero && identity && zero_weight,
         fmt("sigma of identical locals is zero: %s; aggregate of identical models is exact: %s; zero-weight clients "
             "leave aggregate and step-2 output bit-identical: %s",
             sigma_zero ? "yes" : "no", identity ? "yes" : "no", zero_weight ? "yes" : "no"));
}

// --- AC7 -------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ac7_determinism(const fs::path& tmp) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto config = tmp / "desk.ini";
  std::ofstream(config) << "[run]\nseeds = 1\n";
  std::string outputs[2];
  bool ran = true;
  const int workers[2] = {1, 8};
  for (int i = 0; i < 2; ++i) {
    const auto out = tmp / ("det_" + std::to_string(workers[i]) + ".jsonl");
    const std::string cmd = std::string(FEDBEAT_CLI_PATH) + " run --config " + config.string() + " --out " +
                            out.string() + " --workers " + std::to_string(workers[i]) + " > /dev/null";
    const int status = std::system(cmd.c_str());
    ran = ran && WIFEXITED(status) && WEXITSTATUS(status) == 0;
    outputs[i] = slurp(out);
  }
  const double secs = seconds_since(t0);
  const bool same = ran && !outputs[0].empty() && outputs[0] == outputs[1];
  report("AC7", same && secs < kDeterminismSecondsBudget,
         fmt("`fedbeat run` seed 1 at --workers 1 and --workers 8: records byte-identical: %s, %.1fs (limit %.0fs)",
             same ? "yes" : "no", secs, kDeterminismSecondsBudget));
}

// --- AC8 -------------------------------------------------------------------
void ac8_gap() {
  const auto t0 = std::chrono::steady_clock::now();
  experiment::ExperimentConfig cfg;  // C=4, d=20, K=8, 500 per client, IID, IDN 30%
  cfg.seeds = kSeeds;
  std::vector<double> fb, avg;
  for (auto seed : kSeeds) {
    cfg.method.name = experiment::Method::fedbeat;
    fb.push_back(experiment::run_single(cfg, seed, 1).final_accuracy);
    cfg.method.name = experiment::Method::fedavg;
    avg.push_back(experiment::run_single(cfg, seed, 1).final_accuracy);
  }
  const double gap = mean(fb) - mean(avg);
  const double secs = seconds_since(t0);
  report("AC8", gap >= kMinGap && secs < kGapSecondsBudget,
         fmt("IDN-30%%, 5 seeds: FedBeat %.2f%% vs FedAvg %.2f%%, gap %+.2f points (need >= %.0f), %.1fs (limit %.0fs)",
             100 * mean(fb), 100 * mean(avg), 100 * gap, 100 * kMinGap, secs, kGapSecondsBudget));
}

// --- AC9 -------------------------------------------------------------------
void ac9_ensemble() {
  experiment::ExperimentConfig cfg;
  cfg.dataset.partition = experiment::PartitionKind::dirichlet;
  cfg.dataset.alpha_dir = 1.0;
  cfg.seeds = kSeeds;
  const auto reports = experiment::ablate_ensemble(cfg, 1);
  std::vector<double> acc_with, acc_without, n_with, n_without;
  bool complete = true;
  for (const auto& r : reports) {
    complete = complete && r.pseudo_label_accuracy && r.extracted_count;
    if (!complete) break;
    auto& acc = r.variant == "w/ ensemble" ? acc_with : acc_without;
    auto& n = r.variant == "w/ ensemble" ? n_with : n_without;
    acc.push_back(*r.pseudo_label_accuracy);
    n.push_back(static_cast<double>(*r.extracted_count));
  }
  complete = complete && acc_with.size() == kSeeds.size() && acc_without.size() == kSeeds.size();
  const double count_diff = complete ? std::abs(mean(n_with) - mean(n_without)) / mean(n_without) : 1.0;
  const bool pass = complete && mean(acc_with) >= mean(acc_without) && count_diff < kMaxCountDiff;
  report("AC9", pass,
         fmt("alpha_Dir=1, 5 seeds: pseudo-label acc w/ ensemble %.2f%% vs w/o %.2f%%; extracted %.0f vs %.0f "
             "(diff %.1f%%, limit %.0f%%)",
             complete ? 100 * mean(acc_with) : 0.0, complete ? 100 * mean(acc_without) : 0.0,
             complete ? mean(n_with) : 0.0, complete ? mean(n_without) : 0.0, 100 * count_diff,
             100 * kMaxCountDiff));
}

// --- AC10 ------------------------------------------------------------------
void ac10_threshold() {
  experiment::ExperimentConfig cfg;
  const std::vector<double> taus{0.5, 0.65, 0.8};
  const auto fb = experiment::fedbeat_config(cfg, 1);
  bool nested = true;
  std::vector<std::vector<double>> acc(taus.size());
  std::vector<double> counts(taus.size(), 0.0);
  for (auto seed : kSeeds) {
    const auto d = experiment::prepare_data(cfg.dataset, seed);
    const auto warm = pipeline::step1_warmup(d.train.clients, d.train.input_dim, d.train.num_classes, fb, seed);
    const pipeline::EnsembleStats stats{warm.mu, pipeline::compute_sigma(warm.local_models, warm.mu)};
    const auto scored = pipeline::score_federation(d.train.clients, stats, fb.ensemble, seed, 1);
    std::set<std::tuple<int, std::vector<double>, int>> prev;
    for (std::size_t t = 0; t < taus.size(); ++t) {
      const auto ex = pipeline::extract_federation(d.train.clients, scored, taus[t]);
      std::set<std::tuple<int, std::vector<double>, int>> cur;
      for (const auto& c : ex.clients)
        for (const auto& s : c.samples) cur.insert({c.client_id, s.x, s.noisy_label});
      if (t > 0) nested = nested && std::includes(prev.begin(), prev.end(), cur.begin(), cur.end());
      counts[t] += static_cast<double>(cur.size()) / static_cast<double>(kSeeds.size());
      if (auto a = metrics::pseudo_label_accuracy(ex.clients)) acc[t].push_back(*a);
      prev = std::move(cur);
    }
  }
  bool monotone = true;
  std::string detail;
  for (std::size_t t = 0; t < taus.size(); ++t) {
    const bool have = acc[t].size() == kSeeds.size();
    monotone = monotone && have && (t == 0 || mean(acc[t]) >= mean(acc[t - 1]));
    detail += fmt("tau %.2f: %.2f%% / %.0f; ", taus[t], have ? 100 * mean(acc[t]) : 0.0, counts[t]);
  }
  report("AC10", nested && monotone,
         fmt("threshold sweep, 5 seeds: %sextraction sets nested: %s; accuracy non-decreasing: %s", detail.c_str(),
             nested ? "yes" : "no", monotone ? "yes" : "no"));
}

// --- AC11 ------------------------------------------------------------------
void ac11_clean() {
  experiment::ExperimentConfig cfg;
  cfg.dataset.noise_rate = 0.0;
  cfg.dataset.noise_std = 0.0;
  std::vector<double> fb, avg;
  for (auto seed : kSeeds) {
    cfg.method.name = experiment::Method::fedbeat;
    fb.push_back(experiment::run_single(cfg, seed, 1).final_accuracy);
    cfg.method.name = experiment::Method::fedavg;
    avg.push_back(experiment::run_single(cfg, seed, 1).final_accuracy);
  }
  const double diff = mean(fb) - mean(avg);
  report("AC11", std::abs(diff) <= kCleanTol,
         fmt("noise 0, 5 seeds: FedBeat %.2f%% vs FedAvg %.2f%%, difference %+.2f points (limit ±%.0f)",
             100 * mean(fb), 100 * mean(avg), 100 * diff, 100 * kCleanTol));
}

}  // namespace

int main() {
  const auto tmp = fs::temp_directory_path() / "fedbeat_acceptance";
  fs::create_directories(tmp);

  const std::vector<std::pair<const char*, std::function<void()>>> criteria{
      {"AC1", ac1_gradients},  {"AC2", ac2_simplex},     {"AC3", ac3_identity},
      {"AC4", ac4_posterior},  {"AC5", ac5_noise},       {"AC6", ac6_aggregation},
      {"AC7", [&] { ac7_determinism(tmp); }},            {"AC8", ac8_gap},
      {"AC9", ac9_ensemble},   {"AC10", ac10_threshold}, {"AC11", ac11_clean},
  };
  for (const auto& [id, run] : criteria) {
    try {
      run();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  }
  fs::remove_all(tmp);
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures;
}
