#include "fedbeat/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <string>

#include <omp.h>

#include "fedbeat/errors.hpp"
#include "fedbeat/rng.hpp"

namespace fedbeat::fl {

namespace {

nn::LossGrad batch_loss(const data::ClientDataset& client, std::span<const std::size_t> idx,
                        const nn::ParamVector& w, const LocalContext& ctx,
                        std::span<const nn::TransitionMatrix> transitions) {
  switch (ctx.loss) {
    case LossKind::ce: {
      std::vector<nn::Example> batch;
      batch.reserve(idx.size());
      for (auto i : idx) batch.push_back({client.samples[i].x, client.samples[i].noisy_label});
      return nn::ce_loss_and_grad(batch, w);
    }
    case LossKind::transition: {
      std::vector<nn::TransitionExample> batch;
      batch.reserve(idx.size());
      for (auto i : idx) {
        const auto& s = client.samples[i];
        batch.push_back({s.x, s.noisy_label, *s.pseudo_label});
      }
      return nn::transition_loss_and_grad(batch, w);
    }
    case LossKind::correction: {
      std::vector<nn::Example> batch;
      std::vector<nn::TransitionMatrix> ts;
      batch.reserve(idx.size());
      ts.reserve(idx.size());
      for (auto i : idx) {
        batch.push_back({client.samples[i].x, client.samples[i].noisy_label});
        ts.push_back(transitions[i]);
      }
      return nn::correction_loss_and_grad(batch, w, ts);
    }
  }
  throw InputError("unknown loss kind");
}

}  // namespace

ClientUpdate local_train(const data::ClientDataset& client, const nn::ParamVector& w_init, const RoundPlan& plan,
                         const LocalContext& ctx, const StreamKey& key) {
  if (plan.local_epochs < 1) throw InputError("local_train: local_epochs must be at least 1");
  if (plan.batch_size == 0) throw InputError("local_train: batch_size must be positive");
  if (plan.prox_mu < 0.0) throw InputError("local_train: prox_mu must be non-negative");
  if (ctx.loss == LossKind::correction && ctx.theta == nullptr) {
    throw InputError("local_train: correction loss requires a transition network");
  }
  if (ctx.loss == LossKind::transition) {
    for (const auto& s : client.samples) {
      if (!s.pseudo_label) throw InputError("local_train: transition loss needs pseudo-labelled samples");
    }
  }

  ClientUpdate out{client.client_id, w_init, client.size(), 0.0};
  if (client.samples.empty()) return out;

  std::vector<nn::TransitionMatrix> transitions;
  if (ctx.loss == LossKind::correction) {
    transitions.reserve(client.size());
    for (const auto& s : client.samples) transitions.push_back(nn::transition_forward(s.x, *ctx.theta));
  }

  std::vector<std::size_t> order(client.size());
  double loss_sum = 0.0;
  std::size_t steps = 0;
  for (int epoch = 0; epoch < plan.local_epochs; ++epoch) {
    auto gen = rng::stream(key.master_seed, rng::Purpose::local_shuffle,
                           {key.stage, key.round, static_cast<std::uint64_t>(client.client_id),
                            static_cast<std::uint64_t>(epoch)});
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), gen);
    for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
      const std::size_t len = std::min(plan.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      auto lg = batch_loss(client, idx, out.w, ctx, transitions);
      if (plan.prox_mu > 0.0) {
        for (std::size_t j = 0; j < lg.grad.size(); ++j) {
          const double diff = out.w.values[j] - w_init.values[j];
          lg.grad[j] += plan.prox_mu * diff;
          lg.loss += 0.5 * plan.prox_mu * diff * diff;
        }
      }
      nn::sgd_step_inplace(out.w, lg.grad, plan.lr);
      loss_sum += lg.loss;
      ++steps;
    }
  }
  out.mean_loss = loss_sum / static_cast<double>(steps);
  return out;
}

nn::ParamVector aggregate(std::span<const WeightedModel> models) {
  const nn::ParamVector* first = nullptr;
  for (const auto& m : models) {
    if (m.weight > 0) {
      first = m.w;
      break;
    }
  }
  if (first == nullptr) throw AggregationError("aggregate: every model has zero weight");

  nn::ParamVector mean = *first;
  double total = 0.0;
  bool started = false;
  for (const auto& m : models) {
    if (m.weight == 0) continue;
    if (m.w->spec != mean.spec || m.w->size() != mean.size()) throw InputError("aggregate: model shapes differ");
    const auto wk = static_cast<double>(m.weight);
    total += wk;
    if (!started) {
      started = true;
      continue;
    }
    const double frac = wk / total;
    for (std::size_t j = 0; j < mean.size(); ++j) mean.values[j] += frac * (m.w->values[j] - mean.values[j]);
  }
  return mean;
}

nn::ParamVector aggregate(std::span<const ClientUpdate> updates) {
  std::vector<WeightedModel> models;
  models.reserve(updates.size());
  for (const auto& u : updates) models.push_back({&u.w, u.weight});
  return aggregate(models);
}

std::vector<int> select_participants(std::span<const data::ClientDataset> clients, double fraction,
                                     const StreamKey& key) {
  if (clients.empty()) throw InputError("select_participants: no clients");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("participation fraction must be in (0, 1]");
  std::vector<int> ids;
  ids.reserve(clients.size());
  for (const auto& c : clients) ids.push_back(c.client_id);
  if (fraction < 1.0) {
    const auto m = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size()) - 1e-9)));
    auto gen = rng::stream(key.master_seed, rng::Purpose::participation, {key.stage, key.round});
    std::shuffle(ids.begin(), ids.end(), gen);
    ids.resize(m);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

std::vector<const data::ClientDataset*> resolve(std::span<const data::ClientDataset> clients,
                                                const std::vector<int>& ids) {
  std::vector<const data::ClientDataset*> out;
  out.reserve(ids.size());
  for (int id : ids) {
    auto it = std::find_if(clients.begin(), clients.end(), [id](const auto& c) { return c.client_id == id; });
    if (it == clients.end()) throw InputError("unknown participant client_id " + std::to_string(id));
    out.push_back(&*it);
  }
  return out;
}

std::vector<int> plan_ids(std::span<const data::ClientDataset> clients, const RoundPlan& plan) {
  if (!plan.participants.empty()) {
    auto ids = plan.participants;
    std::sort(ids.begin(), ids.end());
    return ids;
  }
  std::vector<int> ids;
  for (const auto& c : clients) ids.push_back(c.client_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

std::vector<ClientUpdate> train_participants_serial(std::span<const data::ClientDataset> clients,
                                                    const nn::ParamVector& global, const RoundPlan& plan,
                                                    const LocalContext& ctx, const StreamKey& key) {
  const auto members = resolve(clients, plan_ids(clients, plan));
  std::vector<ClientUpdate> updates;
  updates.reserve(members.size());
  for (const auto* c : members) updates.push_back(local_train(*c, global, plan, ctx, key));
  return updates;
}

std::vector<ClientUpdate> train_participants_omp(std::span<const data::ClientDataset> clients,
                                                 const nn::ParamVector& global, const RoundPlan& plan,
                                                 const LocalContext& ctx, const StreamKey& key, int workers) {
  const auto members = resolve(clients, plan_ids(clients, plan));
  const auto n = static_cast<std::ptrdiff_t>(members.size());
  std::vector<ClientUpdate> updates(members.size());
  std::vector<std::exception_ptr> errors(members.size());

#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(1, workers))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      updates[static_cast<std::size_t>(i)] = local_train(*members[static_cast<std::size_t>(i)], global, plan, ctx, key);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return updates;
}

RoundsResult run_rounds(FederationState state, std::span<const data::ClientDataset> clients,
                        const LocalContext& ctx, const RoundOptions& opts) {
  if (opts.rounds < 1) throw InputError("run_rounds: need at least one round");
  if (!state.global_model.all_finite()) throw NumericalError("run_rounds: global model is not finite");

  RoundsResult result;
  result.round_loss.reserve(static_cast<std::size_t>(opts.rounds));
  for (int r = 0; r < opts.rounds; ++r) {
    const StreamKey key{state.master_seed, opts.stage, static_cast<std::uint64_t>(state.round)};
    RoundPlan plan{select_participants(clients, opts.participation, key), opts.local_epochs, opts.lr, opts.prox_mu,
                   opts.batch_size};
    auto updates = opts.schedule == Schedule::serial
                       ? train_participants_serial(clients, state.global_model, plan, ctx, key)
                       : train_participants_omp(clients, state.global_model, plan, ctx, key, opts.workers);

    double loss = 0.0;
    double weight = 0.0;
    for (const auto& u : updates) {
      loss += static_cast<double>(u.weight) * u.mean_loss;
      weight += static_cast<double>(u.weight);
    }
    result.round_loss.push_back(weight > 0.0 ? loss / weight : 0.0);

    state.global_model = aggregate(updates);
    if (!state.global_model.all_finite()) throw NumericalError("run_rounds: aggregated model is not finite");
    ++state.round;
    if (opts.on_round) opts.on_round(r, state);
    result.last_updates = std::move(updates);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace fedbeat::fl
