#pragma once

// The three-step noisy-label pipeline:
//   1. warm-up a weak global classifier on noisy labels, then pseudo-label each
//      client's data with a Bayesian ensemble drawn around it and keep the
//      confident samples;
//   2. federated training of a transition network on (x, noisy, pseudo) triples;
//   3. federated forward-corrected training of the classifier through the
//      fixed transition network.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedbeat/data.hpp"
#include "fedbeat/nn.hpp"
#include "fedbeat/protocol.hpp"
#include "fedbeat/rng.hpp"

namespace fedbeat::pipeline {

struct StageConfig {
  int rounds = 1;
  int local_epochs = 2;
  double lr = 0.01;
};

struct EnsembleSpec {
  int size = 10;
  double tau = 0.65;
  /// false: pseudo-label with the aggregated model alone.
  bool enabled = true;
};

struct FedBeatConfig {
  StageConfig warmup{15, 2, 0.01};
  StageConfig transition{40, 2, 0.01};
  StageConfig correction{25, 2, 0.0005};
  EnsembleSpec ensemble;
  std::vector<std::size_t> hidden_dims{128};
  std::size_t batch_size = 4;
  /// Proximal coefficient for the warm-up rounds (0 = FedAvg aggregation).
  double warmup_prox_mu = 0.0;
  double participation = 1.0;
  int workers = 1;
  fl::Schedule schedule = fl::Schedule::openmp;

  void validate() const;
};

struct EnsembleStats {
  nn::ParamVector mu;
  nn::ParamVector sigma;
};

struct LocalModel {
  int client_id = 0;
  nn::ParamVector w;
  std::size_t weight = 0;
};

struct WarmupResult {
  nn::ParamVector mu;
  std::vector<LocalModel> local_models;
  std::vector<double> round_loss;
};

/// Per-client extracted triples; each sample keeps its pseudo-label and
/// ensemble confidence. Client ids match the source federation.
struct ExtractedDataset {
  std::vector<data::ClientDataset> clients;

  std::size_t total() const noexcept;
};

nn::ModelSpec classifier_spec(std::size_t input_dim, int num_classes, const std::vector<std::size_t>& hidden);
nn::ModelSpec transition_spec(std::size_t input_dim, int num_classes, const std::vector<std::size_t>& hidden);

WarmupResult step1_warmup(std::span<const data::ClientDataset> clients, std::size_t input_dim, int num_classes,
                          const FedBeatConfig& cfg, std::uint64_t seed);

/// sigma_j = sqrt(sum_k (N_k / N) (w^k_j - mu_j)^2)
nn::ParamVector compute_sigma(std::span<const LocalModel> local_models, const nn::ParamVector& mu);

/// M models drawn element-wise from Normal(mu_j, sigma_j^2) using `gen`.
std::vector<nn::ParamVector> sample_ensemble(const EnsembleStats& stats, int m, rng::Engine& gen);

/// Stream a given client uses for its ensemble draws.
rng::Engine ensemble_stream(std::uint64_t seed, int client_id);

/// Mean of the member confidence vectors.
nn::ConfidenceVector ensemble_predict(std::span<const double> x, std::span<const nn::ParamVector> models);

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> v) noexcept;

/// Samples whose ensemble confidence is >= tau, with pseudo_label/confidence set.
data::ClientDataset extract(const data::ClientDataset& client, std::span<const nn::ParamVector> models, double tau);

/// Ensemble predictions for every sample of one client (used to sweep tau over fixed models).
struct ScoredClient {
  int client_id = 0;
  std::vector<int> pseudo;
  std::vector<double> confidence;
};
ScoredClient score_client(const data::ClientDataset& client, std::span<const nn::ParamVector> models);
data::ClientDataset filter_scored(const data::ClientDataset& client, const ScoredClient& scored, double tau);

/// Per-client ensemble models: M draws from the client's own stream, or just
/// mu when the ensemble is disabled.
std::vector<nn::ParamVector> client_models(const EnsembleStats& stats, const EnsembleSpec& spec,
                                           std::uint64_t seed, int client_id);

std::vector<ScoredClient> score_federation(std::span<const data::ClientDataset> clients, const EnsembleStats& stats,
                                           const EnsembleSpec& spec, std::uint64_t seed, int workers);

ExtractedDataset extract_federation(std::span<const data::ClientDataset> clients,
                                    std::span<const ScoredClient> scored, double tau);

struct TransitionObserver {
  std::function<void(int, const nn::ParamVector&)> on_round;
};

/// Throws PipelineError when nothing was extracted.
nn::ParamVector step2_estimate_transition(const ExtractedDataset& extracted, std::size_t input_dim,
                                          int num_classes, const FedBeatConfig& cfg, std::uint64_t seed,
                                          std::vector<double>* round_loss = nullptr,
                                          const TransitionObserver& observer = {});

nn::ParamVector step3_correct_classifier(std::span<const data::ClientDataset> clients, const nn::ParamVector& w_init,
                                         const nn::ParamVector& theta, const FedBeatConfig& cfg, std::uint64_t seed,
                                         std::vector<double>* round_loss = nullptr);

struct FedBeatResult {
  nn::ParamVector w_final;
  nn::ParamVector mu;
  nn::ParamVector theta;
  ExtractedDataset extracted;
  std::optional<double> pseudo_label_accuracy;
  std::size_t extracted_count = 0;
  std::vector<double> warmup_loss;
  std::vector<double> transition_loss;
  std::vector<double> correction_loss;
};

FedBeatResult run_fedbeat(std::span<const data::ClientDataset> clients, std::size_t input_dim, int num_classes,
                          const FedBeatConfig& cfg, std::uint64_t seed);

}  // namespace fedbeat::pipeline
