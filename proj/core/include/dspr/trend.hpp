#pragma once

#include <utility>
#include <vector>

#include "dspr/rng.hpp"
#include "dspr/tensor.hpp"

namespace dspr {

struct TrendConfig {
  int64_t lookback = 24;          // L
  int64_t horizon = 4;            // H
  int64_t n_vars = 5;             // N
  int64_t d_model = 64;
  int64_t depth = 4;
  int64_t downsample_ratio = 2;
  int64_t ma_kernel = 25;         // odd; edge-padded, so L >= kernel is not required
  int64_t n_scales = 3;           // lookback, lookback/2, lookback/4
  int64_t time_features = 4;      // sin/cos of minute-of-hour and hour-of-day

  void validate() const;
  std::vector<int64_t> scale_lengths() const;
};

/// Splits a time-major series into (trend, seasonal) where trend is the
/// edge-padded centered moving average down each column and seasonal is the
/// exact remainder: trend + seasonal == x identically.
std::pair<Tensor, Tensor> moving_average_decompose(const Tensor& x, int64_t kernel);

/// Multi-scale decomposition mixer producing the base forecast for the target
/// variable. Seasonal components mix bottom-up (fine to coarse) and trend
/// components top-down (coarse to fine) through two-layer MLPs over the time
/// axis; `depth` stacked blocks, each with its own mixing weights. The output
/// head is zero-initialized so an untrained stream forecasts 0 in normalized
/// space.
class TrendStream {
 public:
  TrendStream(const TrendConfig& cfg, Tape& tape, Rng& rng);

  /// x: lookback x n_vars, time_feats: (lookback+horizon) x time_features.
  /// Returns the horizon x 1 base forecast.
  Tensor forward(const Tensor& x, const Tensor& time_feats) const;

  void collect_parameters(std::vector<NamedTensor>& out, const std::string& prefix) const;

  const TrendConfig& config() const { return cfg_; }

 private:
  struct TimeMlp {
    Tensor w1, b1, w2, b2;  // (len_in x len_in), (len_in), (len_in x len_out), (len_out)
    Tensor apply(const Tensor& seq) const;  // (d x len_in) -> (d x len_out)
  };

  TrendConfig cfg_;
  Tensor w_in_, b_in_;                        // (n_vars+F) x d_model, d_model
  std::vector<std::vector<TimeMlp>> season_;  // [depth][scale-1] fine -> coarse
  std::vector<std::vector<TimeMlp>> trend_;   // [depth][scale-1] coarse -> fine
  Tensor w_head_, b_head_;                    // zero-initialized
};

}  // namespace dspr
