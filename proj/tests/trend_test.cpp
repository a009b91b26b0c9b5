#include <doctest.h>

#include <cmath>

#include "dspr/data.hpp"
#include "dspr/rng.hpp"
#include "dspr/tensor.hpp"
#include "dspr/trend.hpp"
#include "oracles.hpp"

using namespace dspr;

namespace {

TrendConfig toy_config() {
  TrendConfig cfg;
  cfg.lookback = 8;
  cfg.horizon = 4;
  cfg.n_vars = 2;
  cfg.d_model = 8;
  cfg.depth = 1;
  cfg.ma_kernel = 3;
  return cfg;
}

Tensor time_feats_for(int64_t start, int64_t rows, double period = 10.0) {
  std::vector<double> vals;
  for (int64_t t = start; t < start + rows; ++t) {
    const auto f = time_features_at(t, period);
    vals.insert(vals.end(), f.begin(), f.end());
  }
  return Tensor::from({rows, 4}, std::move(vals));
}

}  // namespace

TEST_CASE("decomposition of a constant series is trend=c, seasonal=0") {
  Tensor x = Tensor::from({10, 1}, std::vector<double>(10, 3.25));
  auto [trend, seasonal] = moving_average_decompose(x, 5);
  for (int64_t i = 0; i < 10; ++i) {
    CHECK(trend.at(i) == doctest::Approx(3.25).epsilon(1e-15));
    CHECK(seasonal.at(i) == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("decomposition of a ramp with kernel 3: interior trend equals the ramp") {
  std::vector<double> ramp(12);
  for (size_t i = 0; i < ramp.size(); ++i) ramp[i] = 2.0 * static_cast<double>(i) + 1.0;
  Tensor x = Tensor::from({12, 1}, ramp);
  auto [trend, seasonal] = moving_average_decompose(x, 3);
  for (int64_t i = 1; i < 11; ++i) {
    CHECK(trend.at(i) == doctest::Approx(ramp[static_cast<size_t>(i)]).epsilon(1e-14));
  }
  for (int64_t i = 0; i < 12; ++i) {
    CHECK(trend.at(i) + seasonal.at(i) == doctest::Approx(ramp[static_cast<size_t>(i)]));
  }
}

TEST_CASE("decomposition reconstructs random series within 1e-12") {
  Rng rng(11);
  Tensor x = Tensor::from({50, 3}, rng.normal_vec(150));
  auto [trend, seasonal] = moving_average_decompose(x, 25);
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(trend.at(i) + seasonal.at(i) - x.at(i)) < 1e-12);
  }
  CHECK_THROWS_AS(moving_average_decompose(x, 6), ContractError);
}

TEST_CASE("untrained stream forecasts exactly zero (zero-initialized head)") {
  Tape tape;
  Rng rng(3);
  const TrendConfig cfg = toy_config();
  TrendStream stream(cfg, tape, rng);
  NoGrad guard(tape);
  Tensor x = Tensor::from({8, 2}, Rng(99).normal_vec(16));
  Tensor out = stream.forward(x, time_feats_for(0, 12));
  CHECK(out.shape() == Shape{4, 1});
  for (int64_t i = 0; i < 4; ++i) CHECK(out.at(i) == 0.0);
}

TEST_CASE("forecast output shape is horizon x 1 across configurations") {
  for (int64_t L : {8, 12, 24}) {
    for (int64_t H : {2, 4, 6}) {
      Tape tape;
      Rng rng(1);
      TrendConfig cfg = toy_config();
      cfg.lookback = L;
      cfg.horizon = H;
      TrendStream stream(cfg, tape, rng);
      NoGrad guard(tape);
      Tensor x = Tensor::from({L, 2}, Rng(5).normal_vec(static_cast<size_t>(2 * L)));
      CHECK(stream.forward(x, time_feats_for(0, L + H)).shape() == Shape{H, 1});
    }
  }
  Tape tape;
  Rng rng(1);
  TrendStream stream(toy_config(), tape, rng);
  Tensor wrong = Tensor::from({9, 2}, std::vector<double>(18, 0.0));
  CHECK_THROWS_AS(stream.forward(wrong, time_feats_for(0, 12)), ShapeError);
}

TEST_CASE("forecast gradients match finite differences") {
  Tape tape;
  Rng rng(17);
  TrendStream stream(toy_config(), tape, rng);
  Tensor x = Tensor::from({8, 2}, Rng(21).normal_vec(16));
  Tensor tf = time_feats_for(0, 12);
  Tensor target = Tensor::from({4, 1}, {0.2, -0.4, 0.9, 0.1});

  std::vector<NamedTensor> named;
  stream.collect_parameters(named, "trend");
  std::vector<Tensor> params;
  for (auto& n : named) params.push_back(n.tensor);

  auto build = [&]() { return mse_loss(stream.forward(x, tf), target); };
  tape.reset();
  for (auto& p : params) p.zero_grad();

  // The head starts at zero, which hides the upstream gradients; nudge it.
  std::vector<NamedTensor> head;
  stream.collect_parameters(head, "t");
  for (auto& n : head) {
    if (n.name == "t.w_head") {
      Rng hr(55);
      for (auto& v : n.tensor.values()) v = hr.uniform(-0.3, 0.3);
    }
  }

  Tensor loss = build();
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.push_back(p.grad_buffer());
  auto eval = [&]() {
    NoGrad guard(tape);
    return build().value();
  };
  const auto res = oracles::finite_diff_check(eval, params, analytic);
  CHECK(res.max_rel_err < 1e-4);
  CHECK(res.coords_checked > 100);
}

TEST_CASE("after 200 steps on a persistence series the stream beats the naive mean") {
  // y_t = y_{t-1} toy: a slow random walk observed on two channels.
  const int64_t T = 400, L = 8, H = 4;
  Rng gen(77);
  std::vector<double> series(static_cast<size_t>(T * 2));
  double level = 0.0;
  for (int64_t t = 0; t < T; ++t) {
    level += 0.05 * gen.normal();
    series[static_cast<size_t>(t * 2)] = level;
    series[static_cast<size_t>(t * 2 + 1)] = gen.normal() * 0.01;
  }

  Tape tape;
  Rng rng(9);
  TrendConfig cfg = toy_config();
  TrendStream stream(cfg, tape, rng);
  std::vector<NamedTensor> named;
  stream.collect_parameters(named, "trend");

  // Plain SGD on windows drawn deterministically; 200 steps as stated.
  Rng pick(13);
  const double lr = 0.05;
  for (int step = 0; step < 200; ++step) {
    const auto s = static_cast<int64_t>(pick.below(static_cast<uint64_t>(T - L - H)));
    std::vector<double> xw(static_cast<size_t>(L * 2));
    for (int64_t i = 0; i < L * 2; ++i) xw[static_cast<size_t>(i)] = series[static_cast<size_t>(s * 2 + i)];
    std::vector<double> yw(static_cast<size_t>(H));
    for (int64_t h = 0; h < H; ++h) yw[static_cast<size_t>(h)] = series[static_cast<size_t>((s + L + h) * 2)];
    tape.reset();
    for (auto& n : named) n.tensor.zero_grad();
    Tensor loss = mse_loss(stream.forward(Tensor::from({L, 2}, xw), time_feats_for(s, L + H)),
                           Tensor::from({H, 1}, yw));
    tape.backward(loss);
    for (auto& n : named) {
      auto& v = n.tensor.values();
      const auto& g = n.tensor.grad_buffer();
      for (size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
  }

  // Evaluate on held-out windows vs the naive global-mean forecast.
  double model_mae = 0.0, naive_mae = 0.0;
  double mean = 0.0;
  for (int64_t t = 0; t < T; ++t) mean += series[static_cast<size_t>(t * 2)];
  mean /= static_cast<double>(T);
  int64_t n_eval = 0;
  NoGrad guard(tape);
  for (int64_t s = T - 80; s + L + H <= T; s += H) {
    std::vector<double> xw(static_cast<size_t>(L * 2));
    for (int64_t i = 0; i < L * 2; ++i) xw[static_cast<size_t>(i)] = series[static_cast<size_t>(s * 2 + i)];
    Tensor out = stream.forward(Tensor::from({L, 2}, xw), time_feats_for(s, L + H));
    for (int64_t h = 0; h < H; ++h) {
      const double truth = series[static_cast<size_t>((s + L + h) * 2)];
      model_mae += std::abs(out.at(h) - truth);
      naive_mae += std::abs(mean - truth);
      ++n_eval;
    }
  }
  model_mae /= static_cast<double>(n_eval);
  naive_mae /= static_cast<double>(n_eval);
  CHECK(model_mae < naive_mae);
}
