#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dspr/graph_static.hpp"
#include "dspr/tensor.hpp"

namespace dspr {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Linear conservation surrogate in raw units: y ~ weights . x_t + intercept.
struct ConservationLaw {
  std::vector<double> weights;
  double intercept = 0.0;

  double apply(const double* row, int64_t n) const;
};

struct SeriesDataset {
  std::vector<std::string> names;
  std::vector<double> values;  // T x N row-major
  int64_t steps = 0;           // T
  double period_seconds = 10.0;
  int64_t target = 0;
  PriorGraph prior;
  std::string generator;       // "transport_delay" | "conservation" | "csv"
  std::string generator_params_json = "{}";

  // Ground truth exported by the generators (empty when unknown).
  std::vector<int64_t> true_tau;   // per step
  std::vector<int64_t> regime_id;  // per step
  std::optional<ConservationLaw> f_cons;

  int64_t n_vars() const { return static_cast<int64_t>(names.size()); }
  double at(int64_t t, int64_t c) const {
    return values[static_cast<size_t>(t * n_vars() + c)];
  }
};

// ---- synthetic generators -------------------------------------------------

struct LagRegime {
  double v_level = 0.0;
  int64_t tau_steps = 4;
};

struct TransportDelayConfig {
  int64_t steps = 20000;
  uint64_t seed = 0;
  std::vector<LagRegime> lag_regimes = {{-1.0, 4}, {1.0, 12}};
  double noise_std = 0.1;
  int64_t dwell_min = 150;  // regime dwell time bounds, in steps
  int64_t dwell_max = 350;
  double actuator_gain = 1.0;
  double state_gain = 0.5;
  double period_seconds = 10.0;
};

/// Actuator-driven process with a flow-dependent transport delay:
/// y_t = a * u_{t - tau(v_t)} + b * x_t + noise. Channels are
/// [u, v, x, d, y] where d is an uncoupled distractor. Exports the true causal
/// edges {u->y, x->y, v->y}, the true per-step delay and the regime sequence.
SeriesDataset gen_transport_delay(const TransportDelayConfig& cfg);

struct ConservationConfig {
  int64_t steps = 10000;
  uint64_t seed = 0;
  double leak = 0.0;       // fraction of inflow lost
  double noise_std = 0.0;
  double period_seconds = 10.0;
};

/// Mass-balance process: outflow tracks total inflow up to a known leak rate.
/// Channels are [f1, f2, lvl, y] with y = (1-leak)*(f1+f2) + noise; the exact
/// linear balance is exported as f_cons.
SeriesDataset gen_conservation(const ConservationConfig& cfg);

// ---- CSV ingestion ----------------------------------------------------------

struct CsvSchema {
  /// 0 disables outlier handling; otherwise |z| > clip_sigma entries are
  /// replaced by linear interpolation of their neighbors.
  double clip_sigma = 3.0;
  /// Columns whose negative values are clamped to zero before anything else
  /// (power-like sensors).
  std::vector<std::string> zero_clip_columns;
};

struct CsvTable {
  std::vector<std::string> names;
  std::vector<double> values;  // rows x cols
  int64_t rows = 0;
  int64_t cols = 0;
};

/// Reads a headered numeric CSV and applies the preprocessing pipeline:
/// zero-clipping of flagged columns, sigma-based outlier removal, linear
/// interpolation of interior gaps, first/last-value fill at the edges.
CsvTable ingest_csv(const std::string& path, const CsvSchema& schema);

void write_csv(const std::string& path, const std::vector<std::string>& names,
               const std::vector<double>& values, int64_t rows, int64_t cols);

// ---- dataset directory IO ---------------------------------------------------

/// Writes data.csv + meta.json + prior.json (+ true_tau.csv when the
/// generator exported delays) into `dir`.
void save_dataset(const SeriesDataset& ds, const std::string& dir);
SeriesDataset load_dataset(const std::string& dir);

// ---- windowing --------------------------------------------------------------

struct Normalization {
  std::vector<double> mean, stddev;  // per variable, fit on the train segment

  double normalize(double v, int64_t c) const {
    return (v - mean[static_cast<size_t>(c)]) / stddev[static_cast<size_t>(c)];
  }
  double denormalize(double v, int64_t c) const {
    return v * stddev[static_cast<size_t>(c)] + mean[static_cast<size_t>(c)];
  }
};

/// A materialized batch of forecasting samples.
struct WindowBatch {
  int64_t count = 0;  // B
  int64_t lookback = 0, horizon = 0, n_vars = 0, time_features = 0;
  std::vector<double> x;           // B x L x N (normalized)
  std::vector<double> time_feats;  // B x (L+H) x F
  std::vector<double> y;           // B x H (normalized target)
  std::vector<double> sample_std;  // per-sample target std over lookback+horizon
  std::vector<int64_t> origin;     // window start index in the full series
  std::vector<int64_t> regime;     // generator regime at the forecast origin, -1 if unknown
  std::vector<double> true_tau;    // B x L, empty if unknown

  Tensor x_tensor(int64_t b) const;          // L x N
  Tensor time_feats_tensor(int64_t b) const; // (L+H) x F
  Tensor y_tensor() const;                   // B x H
};

struct WindowedData {
  SeriesDataset dataset;            // untouched raw copy
  std::vector<double> norm_values; // T x N, z-scored with train statistics
  Normalization norm;
  int64_t lookback = 0, horizon = 0, time_features = 4;
  std::vector<int64_t> train_starts, val_starts, test_starts;
  std::pair<int64_t, int64_t> train_range, val_range, test_range;  // [lo, hi)

  WindowBatch make_batch(const std::vector<int64_t>& starts) const;
  WindowBatch train_batch() const { return make_batch(train_starts); }
  WindowBatch val_batch() const { return make_batch(val_starts); }
  WindowBatch test_batch() const { return make_batch(test_starts); }
};

/// Chronological split (train/val/test by `ratios`), z-normalization fit on
/// the train segment, window enumeration with stride 1 for train and stride H
/// for val/test. Windows never straddle a split boundary.
WindowedData split_windows(const SeriesDataset& ds, int64_t lookback, int64_t horizon,
                           std::array<double, 3> ratios = {0.6, 0.2, 0.2});

/// sin/cos of minute-of-hour and hour-of-day for absolute step `t`.
std::array<double, 4> time_features_at(int64_t t, double period_seconds);

}  // namespace dspr
