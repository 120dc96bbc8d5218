// Serial reference loops vs the OpenMP kernels on a desk-scale federation.
// The second argument of the omp variants is the worker count.

#include <benchmark/benchmark.h>

#include "fedbeat/data.hpp"
#include "fedbeat/metrics.hpp"
#include "fedbeat/pipeline.hpp"
#include "fedbeat/protocol.hpp"

using namespace fedbeat;

namespace {

struct Fixture {
  std::vector<data::ClientDataset> clients;
  std::vector<data::Sample> test;
  nn::ParamVector w;
  fl::RoundPlan plan;

  Fixture() : w(nn::init_params(pipeline::classifier_spec(20, 4, {128}), 1)) {
    auto split = data::generate_blob_split(4, 20, 1000, 500, 2.0, 7);
    data::corrupt_idn(split.train, data::NoiseConfig{0.3, 0.1, 7}, 4);
    clients = data::partition_iid(split.train, 8, 7, 4);
    test = std::move(split.test);
    for (const auto& c : clients) plan.participants.push_back(c.client_id);
    plan.local_epochs = 1;
    plan.lr = 0.01;
    plan.batch_size = 4;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_TrainRoundSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) {
    auto ups = fl::train_participants_serial(f.clients, f.w, f.plan, {}, {1, 1, 0});
    benchmark::DoNotOptimize(ups);
  }
}
BENCHMARK(BM_TrainRoundSerial)->Unit(benchmark::kMillisecond);

void BM_TrainRoundOmp(benchmark::State& state) {
  const auto& f = fixture();
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto ups = fl::train_participants_omp(f.clients, f.w, f.plan, {}, {1, 1, 0}, workers);
    benchmark::DoNotOptimize(ups);
  }
}
BENCHMARK(BM_TrainRoundOmp)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_EvaluateSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(metrics::count_correct_serial(f.w, f.test));
}
BENCHMARK(BM_EvaluateSerial)->Unit(benchmark::kMicrosecond);

void BM_EvaluateOmp(benchmark::State& state) {
  const auto& f = fixture();
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::count_correct_omp(f.w, f.test, workers));
}
BENCHMARK(BM_EvaluateOmp)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMicrosecond);

void BM_ScoreFederation(benchmark::State& state) {
  const auto& f = fixture();
  const pipeline::EnsembleStats stats{f.w, nn::ParamVector(f.w.spec, std::vector<double>(f.w.size(), 0.01))};
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto scored = pipeline::score_federation(f.clients, stats, {10, 0.65, true}, 1, workers);
    benchmark::DoNotOptimize(scored);
  }
}
BENCHMARK(BM_ScoreFederation)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
