#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dspr/checkpoint.hpp"
#include "dspr/data.hpp"
#include "dspr/metrics.hpp"
#include "dspr/model.hpp"

namespace dspr {

// ---- optimizer --------------------------------------------------------------

/// Adam with bias correction and optional global-norm gradient clipping.
/// `lr_scales` multiplies the base rate for named parameter groups (the gate
/// parameter travels ~8 sigmoid-units from its effectively-zero init and
/// needs a faster schedule than the bulk of the network at desk-scale step
/// counts).
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8,
       const std::map<std::string, double>& lr_scales = {});

  void step();
  void zero_grad();
  /// Scales all gradients so their global L2 norm is at most max_norm;
  /// returns the pre-clip norm.
  double clip_global_norm(double max_norm);

  const std::vector<NamedTensor>& params() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<double> lr_per_param_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// ---- configuration ------------------------------------------------------------

enum class Variant { Full, NoPrior, ShuffledPrior, NoAdaptiveWindow, TrendOnly, PgNN, Arx };

std::string variant_str(Variant v);
Variant variant_from_str(const std::string& s);

struct TrainConfig {
  int64_t epochs = 100;
  int64_t batch_size = 32;
  double lr = 1e-3;
  /// Learning-rate multiplier for the gating parameter beta; see Adam.
  double gate_lr_scale = 25.0;
  uint64_t seed = 0;
  double clip_norm = 5.0;
  int64_t patience = 10;
  Variant variant = Variant::Full;
  double pgnn_lambda = 1e-2;
  int64_t arx_p = 4;
  int64_t arx_q = 4;
  DsprConfig model;

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// ---- evaluation ---------------------------------------------------------------

struct EvalOptions {
  double tda_delta = 0.0;  // 0: use 0.1 * std of the evaluated truth
  int64_t tda_segment = 4;
  bool regimes = false;    // add High/Medium/Low tertile reports
};

struct DelayRow {
  int64_t sample = 0, t = 0, channel = 0;
  double tau = 0.0;
  std::string regime;
};

struct EvalArtifacts {
  std::vector<MetricReport> reports;   // horizon cuts + Avg (+ regimes when asked)
  std::vector<double> adjacency_mean;  // C x C over all evaluated windows
  std::vector<DelayRow> delay_profile;
  Tensor y_hat;  // S x H
  Tensor y;      // S x H
};

/// Runs the frozen model over a window set in no-grad mode and assembles
/// predictions, metric reports, the test-set mean dynamic adjacency and the
/// learned delay profile.
EvalArtifacts evaluate_model(const DsprModel& model, const WindowedData& data,
                             const std::vector<int64_t>& starts, const EvalOptions& opts);

// ---- training -----------------------------------------------------------------

struct RunRecord {
  TrainConfig config;
  int64_t epochs_run = 0;
  int64_t best_epoch = -1;
  double best_val_loss = 0.0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> gate_trajectory;  // sigmoid(beta) after each epoch
  double val_mae = 0.0, val_rmse = 0.0;  // metric snapshot at the best epoch
  std::vector<MetricReport> test_reports;
  std::vector<double> test_adjacency_mean;
  std::vector<DelayRow> test_delay_profile;
  double wall_seconds = 0.0;
  std::string checkpoint_path;
};

std::string run_record_to_json(const RunRecord& r);
void save_run_record(const RunRecord& r, const std::string& path);

/// Trains the configured variant; deterministic given the seed. Selects the
/// checkpoint at minimum validation loss and restores it before the final
/// test evaluation. When out_dir is nonempty, writes checkpoint.dspr and
/// run_record.json there. Non-finite losses abort with a diagnostic.
RunRecord train_model(const WindowedData& data, const TrainConfig& cfg,
                      const std::string& out_dir = "", const EvalOptions& eval_opts = {});

/// Rebuilds a model (or ARX baseline) from a checkpoint; the returned model
/// references `tape` for its parameters.
struct RestoredModel {
  TrainConfig config;
  std::unique_ptr<DsprModel> model;  // null for ARX checkpoints
  std::unique_ptr<struct ArxModel> arx;
};
RestoredModel restore_model(const Checkpoint& ckpt, const PriorGraph& prior, Tape& tape);

/// Degree-preserving randomization of the prior: conjugation by a seeded
/// non-identity node permutation.
std::vector<double> shuffle_prior_adjacency(const std::vector<double>& adj, int64_t n_vars,
                                            uint64_t seed);

/// Normalized-space conservation targets for the PG-NN penalty: the raw-space
/// surrogate is applied to the denormalized last lookback row and tiled over
/// the horizon. Errors when the dataset exports no surrogate.
Tensor pgnn_targets(const WindowBatch& batch, const WindowedData& data);

// ---- ablations ------------------------------------------------------------------

struct AblationRow {
  std::string variant;
  double mae = 0.0, rmse = 0.0;
  double delta_mae_pct = 0.0, delta_rmse_pct = 0.0;  // vs the full model
};

/// Trains every requested variant on identical splits and seed; reports
/// relative MAE/RMSE change against the full model.
std::vector<AblationRow> run_ablation_suite(const WindowedData& data,
                                            const TrainConfig& base,
                                            const std::vector<Variant>& variants,
                                            const std::string& out_dir = "",
                                            std::vector<RunRecord>* records = nullptr);

// ---- ARX baseline ----------------------------------------------------------------

struct ArxModel {
  int64_t p = 4, q = 4;
  int64_t n_vars = 0, target = 0;
  /// [p own lags][q lags per exogenous channel, channels in index order,
  /// target skipped][intercept]
  std::vector<double> coef;
  bool ridge_fallback = false;

  /// Direct multi-step forecast by recursion; exogenous regressors freeze at
  /// their last observed value past the forecast origin.
  std::vector<double> forecast(const double* window, int64_t lookback, int64_t horizon) const;
};

/// Least-squares fit on the normalized train segment; singular normal
/// equations fall back to ridge (1e-6) and set the flag.
ArxModel fit_arx(const WindowedData& data, int64_t order_p, int64_t order_q);

/// S x H predictions over a batch.
Tensor arx_predictions(const ArxModel& model, const WindowBatch& batch);

// ---- mechanism stability ------------------------------------------------------------

struct StabilityResult {
  double jaccard_top_k = 0.0;      // mean pairwise Jaccard of top-k edge sets
  double rank_correlation = 0.0;   // mean pairwise Spearman over off-diagonal weights
};

std::vector<std::pair<int64_t, int64_t>> top_k_edges(const std::vector<double>& adjacency,
                                                     int64_t n_vars, int64_t k);

/// Compares learned mean dynamic adjacencies across runs (>= 2 required).
StabilityResult mechanism_stability(const std::vector<std::vector<double>>& adjacency_means,
                                    int64_t n_vars, int64_t top_k = 5);

}  // namespace dspr
