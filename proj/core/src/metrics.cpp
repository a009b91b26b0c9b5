#include "dspr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dspr {

namespace {

void check_pair(const Tensor& y_hat, const Tensor& y, const char* op) {
  if (y_hat.shape() != y.shape()) {
    throw ShapeError(std::string(op) + ": shapes disagree, " + shape_str(y_hat.shape()) +
                     " and " + shape_str(y.shape()));
  }
  if (y_hat.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected [SxH] matrices, got " +
                     shape_str(y_hat.shape()));
  }
}

int sgn(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

}  // namespace

double mae(const Tensor& y_hat, const Tensor& y) {
  check_pair(y_hat, y, "mae");
  double acc = 0.0;
  for (int64_t i = 0; i < y_hat.numel(); ++i) acc += std::abs(y_hat.at(i) - y.at(i));
  return acc / static_cast<double>(y_hat.numel());
}

double rmse(const Tensor& y_hat, const Tensor& y) {
  check_pair(y_hat, y, "rmse");
  double acc = 0.0;
  for (int64_t i = 0; i < y_hat.numel(); ++i) {
    const double d = y_hat.at(i) - y.at(i);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(y_hat.numel()));
}

double mca(const Tensor& y_hat, const Tensor& y, double eps) {
  check_pair(y_hat, y, "mca");
  if (eps <= 0.0) throw ContractError("mca: eps must be positive");
  const int64_t s = y_hat.size(0), h = y_hat.size(1);
  double acc = 0.0;
  for (int64_t i = 0; i < s; ++i) {
    double sum_hat = 0.0, sum_true = 0.0;
    for (int64_t t = 0; t < h; ++t) {
      sum_hat += y_hat.at(i, t);
      sum_true += y.at(i, t);
    }
    acc += 1.0 - std::abs(sum_hat - sum_true) / (sum_true + eps);
  }
  return acc / static_cast<double>(s) * 100.0;
}

double tvr(const Tensor& y_hat, const Tensor& y, double eps) {
  check_pair(y_hat, y, "tvr");
  if (eps <= 0.0) throw ContractError("tvr: eps must be positive");
  const int64_t s = y_hat.size(0), h = y_hat.size(1);
  double acc = 0.0;
  for (int64_t i = 0; i < s; ++i) {
    double tv_hat = 0.0, tv_true = 0.0;
    for (int64_t t = 0; t + 1 < h; ++t) {
      tv_hat += std::abs(y_hat.at(i, t + 1) - y_hat.at(i, t));
      tv_true += std::abs(y.at(i, t + 1) - y.at(i, t));
    }
    // eps guards the vanishing-variation case only, so matched variation is
    // ratio 1 exactly and a constant forecast is ratio 0 exactly.
    const double ratio = tv_hat / std::max(tv_true, eps);
    acc += 1.0 - std::abs(1.0 - ratio);
  }
  return acc / static_cast<double>(s) * 100.0;
}

std::optional<double> tda(const Tensor& y_hat, const Tensor& y, double delta,
                          int64_t segment) {
  check_pair(y_hat, y, "tda");
  if (delta <= 0.0) throw ContractError("tda: delta must be positive");
  if (segment < 1) throw ContractError("tda: segment length must be >= 1");
  const int64_t s = y_hat.size(0), h = y_hat.size(1);
  const int64_t n_seg = h / segment;
  int64_t significant = 0, correct = 0;
  for (int64_t i = 0; i < s; ++i) {
    for (int64_t k = 0; k + 1 < n_seg; ++k) {
      double m_hat0 = 0.0, m_hat1 = 0.0, m0 = 0.0, m1 = 0.0;
      for (int64_t t = 0; t < segment; ++t) {
        m_hat0 += y_hat.at(i, k * segment + t);
        m_hat1 += y_hat.at(i, (k + 1) * segment + t);
        m0 += y.at(i, k * segment + t);
        m1 += y.at(i, (k + 1) * segment + t);
      }
      const double d_true = (m1 - m0) / static_cast<double>(segment);
      if (std::abs(d_true) <= delta) continue;
      const double d_hat = (m_hat1 - m_hat0) / static_cast<double>(segment);
      ++significant;
      if (sgn(d_hat) == sgn(d_true)) ++correct;
    }
  }
  if (significant == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(significant) * 100.0;
}

double tda_default_delta(const Tensor& y) {
  double sum = 0.0, sq = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    sum += y.at(i);
    sq += y.at(i) * y.at(i);
  }
  const double n = static_cast<double>(y.numel());
  const double mean = sum / n;
  return 0.1 * std::sqrt(std::max(0.0, sq / n - mean * mean));
}

const std::vector<int64_t>& RegimePartition::group(const std::string& name) const {
  if (name == "High") return high;
  if (name == "Medium") return medium;
  if (name == "Low") return low;
  throw ContractError("unknown regime group: " + name);
}

RegimePartition regime_split(const std::vector<double>& sample_std) {
  const int64_t n = static_cast<int64_t>(sample_std.size());
  if (n < 3) {
    throw ContractError("regime_split: need at least 3 samples, got " + std::to_string(n));
  }
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return sample_std[static_cast<size_t>(a)] < sample_std[static_cast<size_t>(b)];
  });
  const int64_t n1 = n / 3, n2 = 2 * n / 3;
  RegimePartition p;
  p.low.assign(order.begin(), order.begin() + n1);
  p.medium.assign(order.begin() + n1, order.begin() + n2);
  p.high.assign(order.begin() + n2, order.end());
  p.threshold_low = sample_std[static_cast<size_t>(order[static_cast<size_t>(n1)])];
  p.threshold_high = sample_std[static_cast<size_t>(order[static_cast<size_t>(n2)])];
  return p;
}

MetricReport evaluate_forecasts(const Tensor& y_hat, const Tensor& y, double tda_delta,
                                int64_t tda_segment, const std::string& regime) {
  MetricReport r;
  r.horizon = y_hat.size(1);
  r.n_samples = y_hat.size(0);
  r.mae = mae(y_hat, y);
  r.rmse = rmse(y_hat, y);
  r.mca = mca(y_hat, y);
  r.tvr = tvr(y_hat, y);
  r.tda = tda(y_hat, y, tda_delta, tda_segment);
  r.mca_clipped = std::clamp(r.mca, 0.0, 100.0);
  r.tvr_clipped = std::clamp(r.tvr, 0.0, 100.0);
  r.regime = regime;
  r.tda_delta = tda_delta;
  r.tda_segment = tda_segment;
  return r;
}

}  // namespace dspr
