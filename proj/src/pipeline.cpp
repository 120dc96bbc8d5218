#include "fedbeat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <random>
#include <string>

#include <omp.h>

#include "fedbeat/errors.hpp"
#include "fedbeat/metrics.hpp"

namespace fedbeat::pipeline {

namespace {

enum Stage : std::uint64_t { kWarmup = 1, kTransition = 2, kCorrection = 3 };

void check_stage(const StageConfig& s, const char* name) {
  if (s.rounds < 1 || s.local_epochs < 1) throw ConfigError(std::string(name) + ": rounds and epochs must be >= 1");
  if (!(s.lr > 0.0)) throw ConfigError(std::string(name) + ": learning rate must be positive");
}

fl::RoundOptions options_for(const StageConfig& s, const FedBeatConfig& cfg, std::uint64_t stage, double prox_mu) {
  fl::RoundOptions opts;
  opts.rounds = s.rounds;
  opts.local_epochs = s.local_epochs;
  opts.lr = s.lr;
  opts.prox_mu = prox_mu;
  opts.batch_size = cfg.batch_size;
  opts.participation = cfg.participation;
  opts.stage = stage;
  opts.workers = cfg.workers;
  opts.schedule = cfg.schedule;
  return opts;
}

}  // namespace

void FedBeatConfig::validate() const {
  check_stage(warmup, "warmup");
  check_stage(transition, "transition");
  check_stage(correction, "correction");
  if (ensemble.size < 1) throw ConfigError("ensemble size must be >= 1");
  if (!(ensemble.tau >= 0.0 && ensemble.tau <= 1.0)) throw ConfigError("tau must be in [0, 1]");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (warmup_prox_mu < 0.0) throw ConfigError("prox_mu must be non-negative");
  if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("participation must be in (0, 1]");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

std::size_t ExtractedDataset::total() const noexcept {
  std::size_t n = 0;
  for (const auto& c : clients) n += c.size();
  return n;
}

nn::ModelSpec classifier_spec(std::size_t input_dim, int num_classes, const std::vector<std::size_t>& hidden) {
  nn::ModelSpec spec{input_dim, hidden, nn::OutputKind::class_simplex, num_classes};
  spec.validate();
  return spec;
}

nn::ModelSpec transition_spec(std::size_t input_dim, int num_classes, const std::vector<std::size_t>& hidden) {
  nn::ModelSpec spec{input_dim, hidden, nn::OutputKind::transition, num_classes};
  spec.validate();
  return spec;
}

WarmupResult step1_warmup(std::span<const data::ClientDataset> clients, std::size_t input_dim, int num_classes,
                          const FedBeatConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto spec = classifier_spec(input_dim, num_classes, cfg.hidden_dims);
  fl::FederationState state{nn::init_params(spec, rng::derive(seed, rng::Purpose::init_classifier)), 0, seed};
  // Warm-up uses full participation: sigma needs every client's final model.
  auto opts = options_for(cfg.warmup, cfg, kWarmup, cfg.warmup_prox_mu);
  opts.participation = 1.0;
  auto rounds = fl::run_rounds(std::move(state), clients, fl::LocalContext{fl::LossKind::ce, nullptr}, opts);

  WarmupResult out;
  out.mu = std::move(rounds.state.global_model);
  out.round_loss = std::move(rounds.round_loss);
  out.local_models.reserve(rounds.last_updates.size());
  for (auto& u : rounds.last_updates) out.local_models.push_back({u.client_id, std::move(u.w), u.weight});
  return out;
}

nn::ParamVector compute_sigma(std::span<const LocalModel> local_models, const nn::ParamVector& mu) {
  if (local_models.empty()) throw InputError("compute_sigma: no local models");
  double total = 0.0;
  for (const auto& m : local_models) {
    if (m.w.spec != mu.spec || m.w.size() != mu.size()) throw InputError("compute_sigma: model shapes differ");
    total += static_cast<double>(m.weight);
  }
  if (!(total > 0.0)) throw InputError("compute_sigma: total weight is zero");

  nn::ParamVector sigma(mu.spec);
  for (const auto& m : local_models) {
    if (m.weight == 0) continue;
    const double frac = static_cast<double>(m.weight) / total;
    for (std::size_t j = 0; j < mu.size(); ++j) {
      const double d = m.w.values[j] - mu.values[j];
      sigma.values[j] += frac * d * d;
    }
  }
  for (auto& v : sigma.values) v = std::sqrt(v);
  return sigma;
}

std::vector<nn::ParamVector> sample_ensemble(const EnsembleStats& stats, int m, rng::Engine& gen) {
  if (m < 1) throw InputError("sample_ensemble: M must be >= 1");
  if (stats.mu.size() != stats.sigma.size()) throw InputError("sample_ensemble: mu and sigma shapes differ");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<nn::ParamVector> models;
  models.reserve(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) {
    nn::ParamVector w = stats.mu;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double z = normal(gen);
      const double s = stats.sigma.values[j];
      if (s != 0.0) w.values[j] += s * z;
    }
    models.push_back(std::move(w));
  }
  return models;
}

rng::Engine ensemble_stream(std::uint64_t seed, int client_id) {
  return rng::stream(seed, rng::Purpose::ensemble, {static_cast<std::uint64_t>(client_id)});
}

int argmax(std::span<const double> v) noexcept {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

nn::ConfidenceVector ensemble_predict(std::span<const double> x, std::span<const nn::ParamVector> models) {
  if (models.empty()) throw InputError("ensemble_predict: no models");
  nn::ConfidenceVector avg(static_cast<std::size_t>(models.front().spec.num_classes), 0.0);
  for (const auto& w : models) {
    const auto p = nn::classifier_forward(x, w);
    if (p.size() != avg.size()) throw InputError("ensemble_predict: class counts differ");
    for (std::size_t c = 0; c < p.size(); ++c) avg[c] += p[c];
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  for (auto& v : avg) v *= inv;
  return avg;
}

ScoredClient score_client(const data::ClientDataset& client, std::span<const nn::ParamVector> models) {
  ScoredClient out;
  out.client_id = client.client_id;
  out.pseudo.reserve(client.size());
  out.confidence.reserve(client.size());
  for (const auto& s : client.samples) {
    const auto f = ensemble_predict(s.x, models);
    const int y = argmax(f);
    out.pseudo.push_back(y);
    out.confidence.push_back(f[static_cast<std::size_t>(y)]);
  }
  return out;
}

data::ClientDataset filter_scored(const data::ClientDataset& client, const ScoredClient& scored, double tau) {
  if (scored.pseudo.size() != client.size()) throw InputError("filter_scored: score count does not match client");
  data::ClientDataset out;
  out.client_id = client.client_id;
  for (std::size_t i = 0; i < client.size(); ++i) {
    if (scored.confidence[i] < tau) continue;
    data::Sample s = client.samples[i];
    s.pseudo_label = scored.pseudo[i];
    s.confidence = scored.confidence[i];
    out.samples.push_back(std::move(s));
  }
  return out;
}

data::ClientDataset extract(const data::ClientDataset& client, std::span<const nn::ParamVector> models, double tau) {
  if (models.empty()) throw InputError("extract: no models");
  return filter_scored(client, score_client(client, models), tau);
}

std::vector<nn::ParamVector> client_models(const EnsembleStats& stats, const EnsembleSpec& spec, std::uint64_t seed,
                                           int client_id) {
  if (!spec.enabled) return {stats.mu};
  auto gen = ensemble_stream(seed, client_id);
  return sample_ensemble(stats, spec.size, gen);
}

std::vector<ScoredClient> score_federation(std::span<const data::ClientDataset> clients, const EnsembleStats& stats,
                                           const EnsembleSpec& spec, std::uint64_t seed, int workers) {
  const auto n = static_cast<std::ptrdiff_t>(clients.size());
  std::vector<ScoredClient> scored(clients.size());
  std::vector<std::exception_ptr> errors(clients.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(1, workers))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      // Ensemble members are drawn per client and discarded after scoring.
      const auto models = client_models(stats, spec, seed, clients[k].client_id);
      scored[k] = score_client(clients[k], models);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return scored;
}

ExtractedDataset extract_federation(std::span<const data::ClientDataset> clients,
                                    std::span<const ScoredClient> scored, double tau) {
  if (scored.size() != clients.size()) throw InputError("extract_federation: one score set per client required");
  ExtractedDataset out;
  out.clients.reserve(clients.size());
  for (std::size_t k = 0; k < clients.size(); ++k) out.clients.push_back(filter_scored(clients[k], scored[k], tau));
  return out;
}

nn::ParamVector step2_estimate_transition(const ExtractedDataset& extracted, std::size_t input_dim, int num_classes,
                                          const FedBeatConfig& cfg, std::uint64_t seed,
                                          std::vector<double>* round_loss, const TransitionObserver& observer) {
  cfg.validate();
  if (extracted.total() == 0) {
    throw PipelineError("no samples passed the confidence threshold (tau = " + std::to_string(cfg.ensemble.tau) +
                        "); lower tau to extract data for transition estimation");
  }
  const auto spec = transition_spec(input_dim, num_classes, cfg.hidden_dims);
  fl::FederationState state{nn::init_params(spec, rng::derive(seed, rng::Purpose::init_transition)), 0, seed};
  auto opts = options_for(cfg.transition, cfg, kTransition, 0.0);
  if (observer.on_round) {
    opts.on_round = [&](int r, const fl::FederationState& s) { observer.on_round(r, s.global_model); };
  }
  auto rounds = fl::run_rounds(std::move(state), extracted.clients,
                               fl::LocalContext{fl::LossKind::transition, nullptr}, opts);
  if (round_loss) *round_loss = std::move(rounds.round_loss);
  return std::move(rounds.state.global_model);
}

nn::ParamVector step3_correct_classifier(std::span<const data::ClientDataset> clients, const nn::ParamVector& w_init,
                                         const nn::ParamVector& theta, const FedBeatConfig& cfg, std::uint64_t seed,
                                         std::vector<double>* round_loss) {
  cfg.validate();
  fl::FederationState state{w_init, 0, seed};
  const auto opts = options_for(cfg.correction, cfg, kCorrection, 0.0);
  auto rounds = fl::run_rounds(std::move(state), clients, fl::LocalContext{fl::LossKind::correction, &theta}, opts);
  if (round_loss) *round_loss = std::move(rounds.round_loss);
  return std::move(rounds.state.global_model);
}

FedBeatResult run_fedbeat(std::span<const data::ClientDataset> clients, std::size_t input_dim, int num_classes,
                          const FedBeatConfig& cfg, std::uint64_t seed) {
  FedBeatResult out;
  auto warm = step1_warmup(clients, input_dim, num_classes, cfg, seed);
  out.warmup_loss = std::move(warm.round_loss);
  out.mu = warm.mu;

  EnsembleStats stats{warm.mu, compute_sigma(warm.local_models, warm.mu)};
  const auto scored = score_federation(clients, stats, cfg.ensemble, seed, cfg.workers);
  out.extracted = extract_federation(clients, scored, cfg.ensemble.tau);
  out.extracted_count = out.extracted.total();
  out.pseudo_label_accuracy = metrics::pseudo_label_accuracy(out.extracted.clients);

  out.theta = step2_estimate_transition(out.extracted, input_dim, num_classes, cfg, seed, &out.transition_loss);
  out.w_final = step3_correct_classifier(clients, warm.mu, out.theta, cfg, seed, &out.correction_loss);
  return out;
}

}  // namespace fedbeat::pipeline
