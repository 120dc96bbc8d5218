#include <cmath>
#include <vector>

#include "doctest.h"
#include "fedbeat/data.hpp"
#include "fedbeat/errors.hpp"
#include "fedbeat/protocol.hpp"

using namespace fedbeat;
using fl::ClientUpdate;
using fl::WeightedModel;
using nn::ParamVector;

namespace {

const nn::ModelSpec kScalar{1, {}, nn::OutputKind::class_simplex, 2};  // 4 params

ParamVector filled(double v) { return ParamVector(kScalar, std::vector<double>(4, v)); }

nn::ModelSpec clf(std::size_t d, int c) { return nn::ModelSpec{d, {8}, nn::OutputKind::class_simplex, c}; }

std::vector<data::ClientDataset> make_clients(int k, std::size_t per_class, double spread, double noise,
                                              std::uint64_t seed) {
  auto s = data::generate_blobs(3, 5, per_class, spread, seed);
  if (noise > 0) data::corrupt_idn(s, data::NoiseConfig{noise, 0.1, seed}, 3);
  return data::partition_iid(s, k, seed, 3);
}

double l2_distance(const ParamVector& a, const ParamVector& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a.values[j] - b.values[j]) * (a.values[j] - b.values[j]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("aggregate") {
  SUBCASE("weighted mean of [0] x1 and [4] x3 is [3]") {
    const auto a = filled(0.0), b = filled(4.0);
    const std::vector<WeightedModel> in{{&a, 1}, {&b, 3}};
    CHECK(fl::aggregate(in).values == std::vector<double>(4, 3.0));
  }
  SUBCASE("identical models return that model exactly") {
    const ParamVector w(kScalar, {0.1, -0.7, 1e-3, 12.345678901234});
    const std::vector<WeightedModel> in{{&w, 3}, {&w, 17}, {&w, 1}, {&w, 999}};
    CHECK(fl::aggregate(in) == w);
  }
  SUBCASE("zero-weight entries change nothing, bit for bit") {
    const ParamVector a(kScalar, {0.3, 0.1, -0.2, 0.9});
    const ParamVector b(kScalar, {1.7, -0.4, 0.25, 0.01});
    const auto junk = filled(1e6);
    const std::vector<WeightedModel> without{{&a, 7}, {&b, 13}};
    const std::vector<WeightedModel> with{{&a, 7}, {&junk, 0}, {&b, 13}, {&junk, 0}};
    CHECK(fl::aggregate(with) == fl::aggregate(without));
  }
  SUBCASE("all weights zero") {
    const auto a = filled(1.0);
    const std::vector<WeightedModel> in{{&a, 0}};
    CHECK_THROWS_AS(fl::aggregate(in), AggregationError);
    CHECK_THROWS_AS(fl::aggregate(std::span<const WeightedModel>{}), AggregationError);
  }
  SUBCASE("shape mismatch") {
    const auto a = filled(1.0);
    const ParamVector b(clf(2, 2));
    const std::vector<WeightedModel> in{{&a, 1}, {&b, 1}};
    CHECK_THROWS_AS(fl::aggregate(in), InputError);
  }
  SUBCASE("client updates are ordered by id before accumulating") {
    std::vector<ClientUpdate> fwd{{0, filled(0.1), 3, 0}, {1, filled(0.7), 5, 0}, {2, filled(0.2), 11, 0}};
    std::vector<ClientUpdate> rev{fwd[2], fwd[0], fwd[1]};
    CHECK(fl::aggregate(fwd) == fl::aggregate(rev));
  }
}

TEST_CASE("local_train") {
  const auto clients = make_clients(1, 40, 0.3, 0.0, 3);
  const auto w0 = nn::init_params(clf(5, 3), 1);
  const fl::LocalContext ce{fl::LossKind::ce, nullptr};
  const fl::StreamKey key{1, 1, 0};

  SUBCASE("lr 0 returns w_init") {
    const auto up = fl::local_train(clients[0], w0, fl::RoundPlan{{0}, 3, 0.0, 0.0, 8}, ce, key);
    CHECK(up.w == w0);
    CHECK(up.weight == clients[0].size());
  }
  SUBCASE("proximal term pulls the update towards w_init") {
    double prev = 1e300;
    for (double mu : {0.0, 1.0, 100.0}) {
      // lr * mu must stay below 2 for the proximal step to contract
      const auto up = fl::local_train(clients[0], w0, fl::RoundPlan{{0}, 3, 0.01, mu, 8}, ce, key);
      const double dist = l2_distance(up.w, w0);
      CHECK(dist < prev);
      prev = dist;
    }
  }
  SUBCASE("converges on separable blobs") {
    auto w = w0;
    double loss = 0.0;
    for (int r = 0; r < 30; ++r) {
      const auto up = fl::local_train(clients[0], w, fl::RoundPlan{{0}, 2, 0.05, 0.0, 8}, ce,
                                      fl::StreamKey{1, 1, static_cast<std::uint64_t>(r)});
      w = up.w;
      loss = up.mean_loss;
    }
    CHECK(loss < 0.1);
  }
  SUBCASE("empty client contributes nothing") {
    const data::ClientDataset empty{4, {}};
    const auto up = fl::local_train(empty, w0, fl::RoundPlan{{4}, 2, 0.1, 0.0, 8}, ce, key);
    CHECK(up.w == w0);
    CHECK(up.weight == 0);
  }
  SUBCASE("transition loss requires pseudo-labels") {
    const auto theta = nn::init_params(nn::ModelSpec{5, {4}, nn::OutputKind::transition, 3}, 2);
    const fl::LocalContext tr{fl::LossKind::transition, nullptr};
    CHECK_THROWS_AS(fl::local_train(clients[0], theta, fl::RoundPlan{{0}, 1, 0.1, 0.0, 8}, tr, key), InputError);
  }
  SUBCASE("correction loss requires theta") {
    const fl::LocalContext corr{fl::LossKind::correction, nullptr};
    CHECK_THROWS_AS(fl::local_train(clients[0], w0, fl::RoundPlan{{0}, 1, 0.1, 0.0, 8}, corr, key), InputError);
  }
  SUBCASE("diverging training raises a numerical error") {
    CHECK_THROWS_AS(fl::local_train(clients[0], w0, fl::RoundPlan{{0}, 50, 1e200, 0.0, 8}, ce, key), NumericalError);
  }
}

TEST_CASE("run_rounds") {
  const auto clients = make_clients(5, 30, 1.5, 0.3, 8);
  const auto spec = clf(5, 3);

  auto options = [](int workers, fl::Schedule schedule) {
    fl::RoundOptions o;
    o.rounds = 3;
    o.local_epochs = 2;
    o.lr = 0.05;
    o.batch_size = 8;
    o.stage = 1;
    o.workers = workers;
    o.schedule = schedule;
    return o;
  };

  SUBCASE("one round, one client equals local training") {
    const std::vector<data::ClientDataset> one{clients[0]};
    auto opts = options(1, fl::Schedule::serial);
    opts.rounds = 1;
    const fl::FederationState st{nn::init_params(spec, 4), 0, 77};
    const auto res = fl::run_rounds(st, one, {}, opts);
    const auto up = fl::local_train(one[0], st.global_model, fl::RoundPlan{{0}, 2, 0.05, 0.0, 8}, {},
                                    fl::StreamKey{77, 1, 0});
    CHECK(res.state.global_model == up.w);
    CHECK(res.state.round == 1);
  }
  SUBCASE("serial and OpenMP schedules agree bit for bit at any worker count") {
    const fl::FederationState st{nn::init_params(spec, 5), 0, 12};
    const auto ref = fl::run_rounds(st, clients, {}, options(1, fl::Schedule::serial));
    for (int workers : {1, 2, 8}) {
      const auto got = fl::run_rounds(st, clients, {}, options(workers, fl::Schedule::openmp));
      CHECK(got.state.global_model == ref.state.global_model);
      CHECK(got.round_loss == ref.round_loss);
    }
  }
  SUBCASE("deterministic and seed sensitive") {
    const fl::FederationState st{nn::init_params(spec, 5), 0, 12};
    const auto a = fl::run_rounds(st, clients, {}, options(2, fl::Schedule::openmp));
    const auto b = fl::run_rounds(st, clients, {}, options(2, fl::Schedule::openmp));
    CHECK(a.state.global_model == b.state.global_model);
    auto other = st;
    other.master_seed = 13;
    CHECK_FALSE(fl::run_rounds(other, clients, {}, options(2, fl::Schedule::openmp)).state.global_model ==
                a.state.global_model);
  }
  SUBCASE("prox_mu 0 matches the FedAvg path") {
    const fl::FederationState st{nn::init_params(spec, 6), 0, 3};
    auto avg = options(1, fl::Schedule::serial);
    auto prox = avg;
    prox.prox_mu = 0.0;
    CHECK(fl::run_rounds(st, clients, {}, avg).state.global_model ==
          fl::run_rounds(st, clients, {}, prox).state.global_model);
  }
  SUBCASE("an empty client leaves the result unchanged") {
    auto padded = clients;
    padded.push_back(data::ClientDataset{99, {}});
    const fl::FederationState st{nn::init_params(spec, 7), 0, 4};
    CHECK(fl::run_rounds(st, padded, {}, options(2, fl::Schedule::openmp)).state.global_model ==
          fl::run_rounds(st, clients, {}, options(2, fl::Schedule::openmp)).state.global_model);
  }
  SUBCASE("round callback sees each round") {
    auto opts = options(1, fl::Schedule::serial);
    std::vector<int> seen;
    opts.on_round = [&](int r, const fl::FederationState& s) {
      seen.push_back(r);
      CHECK(s.round == r + 1);
    };
    fl::run_rounds(fl::FederationState{nn::init_params(spec, 1), 0, 1}, clients, {}, opts);
    CHECK(seen == std::vector<int>{0, 1, 2});
  }
}

TEST_CASE("select_participants") {
  const auto clients = make_clients(10, 10, 1.0, 0.0, 1);
  SUBCASE("full participation") {
    CHECK(fl::select_participants(clients, 1.0, {1, 2, 0}) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  }
  SUBCASE("fraction picks a sorted, keyed subset") {
    const auto a = fl::select_participants(clients, 0.3, {1, 2, 5});
    CHECK(a.size() == 3);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(a == fl::select_participants(clients, 0.3, {1, 2, 5}));
  }
}
