#pragma once

// Federated round orchestration: local training (FedAvg / FedProx objective),
// weighted aggregation and the broadcast-train-aggregate round loop.
//
// Client updates inside a round are independent; they run either through the
// serial reference loop or the OpenMP kernel. Both produce bit-identical
// results because every client draws from its own keyed stream and the server
// aggregates in ascending client_id order after a barrier.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedbeat/data.hpp"
#include "fedbeat/nn.hpp"

namespace fedbeat::fl {

enum class LossKind { ce, transition, correction };

struct RoundPlan {
  std::vector<int> participants;
  int local_epochs = 1;
  double lr = 0.01;
  double prox_mu = 0.0;
  std::size_t batch_size = 32;
};

struct ClientUpdate {
  int client_id = 0;
  nn::ParamVector w;
  std::size_t weight = 0;
  /// Mean mini-batch loss over the local epochs (0 when the client had no data).
  double mean_loss = 0.0;
};

/// Identifies a training stage; part of every client's RNG key.
struct StreamKey {
  std::uint64_t master_seed = 0;
  std::uint64_t stage = 0;
  std::uint64_t round = 0;
};

/// Everything a client needs besides its data and the broadcast model.
struct LocalContext {
  LossKind loss = LossKind::ce;
  /// Fixed transition network for LossKind::correction.
  const nn::ParamVector* theta = nullptr;
};

/// Local mini-batch SGD on one client.
///
/// ce / correction train on (x, noisy label) over all samples and report N_k
/// as the weight; transition trains on (x, noisy, pseudo) and requires every
/// sample to carry a pseudo-label, reporting N~_k. A client with no data
/// returns w_init with weight 0. A positive prox_mu adds
/// (prox_mu / 2) * ||w - w_init||^2 to the objective.
ClientUpdate local_train(const data::ClientDataset& client, const nn::ParamVector& w_init, const RoundPlan& plan,
                         const LocalContext& ctx, const StreamKey& key);

struct WeightedModel {
  const nn::ParamVector* w = nullptr;
  std::size_t weight = 0;
};

/// Weighted mean of the models with positive weight, accumulated in the given
/// order as a running mean (an input equal to the running mean leaves it
/// bit-for-bit unchanged). Throws AggregationError when every weight is zero.
nn::ParamVector aggregate(std::span<const WeightedModel> models);
nn::ParamVector aggregate(std::span<const ClientUpdate> updates);

struct FederationState {
  nn::ParamVector global_model;
  int round = 0;
  std::uint64_t master_seed = 0;
};

enum class Schedule { serial, openmp };

struct RoundOptions {
  int rounds = 1;
  int local_epochs = 1;
  double lr = 0.01;
  double prox_mu = 0.0;
  std::size_t batch_size = 32;
  /// Fraction of clients drawn each round; 1 means everyone participates.
  double participation = 1.0;
  std::uint64_t stage = 0;
  int workers = 1;
  Schedule schedule = Schedule::openmp;
  /// Called after each aggregation with (round index, new state).
  std::function<void(int, const FederationState&)> on_round;
};

struct RoundsResult {
  FederationState state;
  /// Client updates of the last round, ascending client_id.
  std::vector<ClientUpdate> last_updates;
  /// Weighted mean local loss per round.
  std::vector<double> round_loss;
};

/// Participants for one round, ascending client_id.
std::vector<int> select_participants(std::span<const data::ClientDataset> clients, double fraction,
                                     const StreamKey& key);

/// Trains every participant from the same broadcast model.
std::vector<ClientUpdate> train_participants_serial(std::span<const data::ClientDataset> clients,
                                                    const nn::ParamVector& global, const RoundPlan& plan,
                                                    const LocalContext& ctx, const StreamKey& key);
std::vector<ClientUpdate> train_participants_omp(std::span<const data::ClientDataset> clients,
                                                 const nn::ParamVector& global, const RoundPlan& plan,
                                                 const LocalContext& ctx, const StreamKey& key, int workers);

RoundsResult run_rounds(FederationState state, std::span<const data::ClientDataset> clients,
                        const LocalContext& ctx, const RoundOptions& opts);

}  // namespace fedbeat::fl
