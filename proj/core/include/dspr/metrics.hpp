#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dspr/tensor.hpp"

namespace dspr {

/// One row of a results table: accuracy plus physical-fidelity metrics for a
/// horizon (optionally restricted to a volatility regime).
struct MetricReport {
  int64_t horizon = 0;
  int64_t n_samples = 0;
  double mae = 0.0;
  double rmse = 0.0;
  double mca = 0.0;       // raw, can exceed [0,100] on degenerate sums
  double tvr = 0.0;       // raw
  std::optional<double> tda;  // undefined when no significant interval exists
  double mca_clipped = 0.0;   // clamped to [0,100] for reporting
  double tvr_clipped = 0.0;
  std::string regime = "All";  // All | High | Medium | Low
  std::string label = "";      // table row label, e.g. "h=24", "avg", "regime=High"
  double tda_delta = 0.0;      // the significance threshold used
  int64_t tda_segment = 4;     // the interval length used
};

double mae(const Tensor& y_hat, const Tensor& y);
double rmse(const Tensor& y_hat, const Tensor& y);

/// Mean Conservation Accuracy: per-sample agreement of horizon totals,
/// mean over samples of (1 - |sum(y_hat) - sum(y)| / (sum(y) + eps)) * 100.
double mca(const Tensor& y_hat, const Tensor& y, double eps = 1e-8);

/// Total Variation Ratio: 100 at matched volatility, penalizing over-smoothing
/// and excess noise symmetrically via 1 - |1 - TV(y_hat)/TV(y)|.
double tvr(const Tensor& y_hat, const Tensor& y, double eps = 1e-8);

/// Trend Directional Accuracy over adjacent horizon segments of length
/// `segment`: among intervals whose true mean shift exceeds `delta` in
/// magnitude, the fraction with matching shift sign. Returns nullopt when no
/// interval qualifies (undefined, distinct from 0).
std::optional<double> tda(const Tensor& y_hat, const Tensor& y, double delta,
                          int64_t segment = 4);

/// Default significance threshold: 0.1 * std of the pooled true values.
double tda_default_delta(const Tensor& y);

struct RegimePartition {
  std::vector<int64_t> high, medium, low;
  double threshold_low = 0.0;   // first std value in the medium tertile
  double threshold_high = 0.0;  // first std value in the high tertile

  const std::vector<int64_t>& group(const std::string& name) const;
};

/// Tertile split of samples by per-sample target standard deviation; ties
/// break by sample index. Requires at least 3 samples.
RegimePartition regime_split(const std::vector<double>& sample_std);

/// Full report over an S x H prediction/truth pair.
MetricReport evaluate_forecasts(const Tensor& y_hat, const Tensor& y, double tda_delta,
                                int64_t tda_segment, const std::string& regime = "All");

}  // namespace dspr
