#include <benchmark/benchmark.h>

#include "dspr/data.hpp"
#include "dspr/graph_dynamic.hpp"
#include "dspr/metrics.hpp"
#include "dspr/model.hpp"
#include "dspr/rng.hpp"
#include "dspr/training.hpp"

using namespace dspr;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed) {
  Rng rng(seed);
  const auto count = static_cast<size_t>(shape_numel(shape));
  return Tensor::from(std::move(shape), rng.normal_vec(count));
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  Tensor a = random_tensor({n, n}, 1);
  Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_SoftmaxRows(benchmark::State& state) {
  Tensor x = random_tensor({state.range(0), state.range(0)}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(softmax_rows(x));
  }
}
BENCHMARK(BM_SoftmaxRows)->Arg(24)->Arg(128);

void BM_ForwardPass(benchmark::State& state) {
  Tape tape;
  DsprConfig cfg;
  cfg.lookback = 24;
  cfg.horizon = 4;
  cfg.n_vars = 5;
  cfg.target = 4;
  cfg.trend_d_model = 16;
  cfg.trend_depth = state.range(0);
  cfg.ma_kernel = 7;
  cfg.d_emb = 16;
  cfg.node_emb_dim = 8;
  const PriorGraph prior = build_prior(
      {"u", "v", "x", "d", "y"},
      {VariableRole::Actuator, VariableRole::State, VariableRole::State,
       VariableRole::State, VariableRole::Target},
      {{1, 4}, {2, 4}});
  DsprModel model(cfg, prior, tape, 7);
  const WindowedData wd = split_windows(
      gen_transport_delay([] {
        TransportDelayConfig g;
        g.steps = 400;
        g.seed = 5;
        return g;
      }()),
      24, 4);
  const WindowBatch batch = wd.make_batch(
      std::vector<int64_t>(wd.train_starts.begin(), wd.train_starts.begin() + 8));
  NoGrad guard(tape);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(batch));
  }
  state.SetItemsProcessed(state.iterations() * batch.count);
}
BENCHMARK(BM_ForwardPass)->Arg(1)->Arg(2);

void BM_ForwardBackward(benchmark::State& state) {
  Tape tape;
  DsprConfig cfg;
  cfg.lookback = 24;
  cfg.horizon = 4;
  cfg.n_vars = 5;
  cfg.target = 4;
  cfg.trend_d_model = 16;
  cfg.trend_depth = 1;
  cfg.ma_kernel = 7;
  cfg.d_emb = 16;
  cfg.node_emb_dim = 8;
  const PriorGraph prior = build_prior(
      {"u", "v", "x", "d", "y"},
      {VariableRole::Actuator, VariableRole::State, VariableRole::State,
       VariableRole::State, VariableRole::Target},
      {{1, 4}, {2, 4}});
  DsprModel model(cfg, prior, tape, 7);
  const WindowedData wd = split_windows(
      gen_transport_delay([] {
        TransportDelayConfig g;
        g.steps = 400;
        g.seed = 5;
        return g;
      }()),
      24, 4);
  const WindowBatch batch = wd.make_batch(
      std::vector<int64_t>(wd.train_starts.begin(), wd.train_starts.begin() + 8));
  const Tensor y = batch.y_tensor();
  for (auto _ : state) {
    tape.reset();
    Tensor loss = model.loss(model.forward(batch), y);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value());
  }
  state.SetItemsProcessed(state.iterations() * batch.count);
}
BENCHMARK(BM_ForwardBackward);

void BM_DynamicAdjacency(benchmark::State& state) {
  Tensor h = random_tensor({state.range(0), 16}, 9);
  for (auto _ : state) {
    benchmark::DoNotOptimize(dynamic_adjacency(h));
  }
}
BENCHMARK(BM_DynamicAdjacency)->Arg(5)->Arg(10);

void BM_Metrics(benchmark::State& state) {
  Tensor y_hat = random_tensor({256, 24}, 11);
  Tensor y = random_tensor({256, 24}, 12);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mca(y_hat, y));
    benchmark::DoNotOptimize(tvr(y_hat, y));
    benchmark::DoNotOptimize(tda(y_hat, y, 0.1, 4));
  }
}
BENCHMARK(BM_Metrics);

void BM_GenTransportDelay(benchmark::State& state) {
  TransportDelayConfig cfg;
  cfg.steps = state.range(0);
  cfg.seed = 3;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gen_transport_delay(cfg));
  }
  state.SetItemsProcessed(state.iterations() * cfg.steps);
}
BENCHMARK(BM_GenTransportDelay)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
