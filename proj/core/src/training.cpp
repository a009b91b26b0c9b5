#include "dspr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "dspr/report.hpp"
#include "dspr/rng.hpp"
#include "json_util.hpp"

namespace fs = std::filesystem;

namespace dspr {

// ---- Adam -------------------------------------------------------------------

Adam::Adam(std::vector<NamedTensor> params, double lr, double beta1, double beta2,
           double eps, const std::map<std::string, double>& lr_scales)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
    const auto it = lr_scales.find(p.name);
    lr_per_param_.push_back(it == lr_scales.end() ? lr : lr * it->second);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double Adam::clip_global_norm(double max_norm) {
  double sq = 0.0;
  for (auto& p : params_) {
    for (double g : p.tensor.grad_buffer()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params_) {
      for (double& g : p.tensor.grad_buffer()) g *= scale;
    }
  }
  return norm;
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& values = params_[i].tensor.values();
    auto& grads = params_[i].tensor.grad_buffer();
    auto& m = m_[i];
    auto& v = v_[i];
    const double rate = lr_per_param_[i];
    for (size_t j = 0; j < values.size(); ++j) {
      const double g = grads[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      values[j] -= rate * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

// ---- configuration ------------------------------------------------------------

std::string variant_str(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoPrior: return "no_prior";
    case Variant::ShuffledPrior: return "shuffled_prior";
    case Variant::NoAdaptiveWindow: return "no_adaptive_window";
    case Variant::TrendOnly: return "trend_only";
    case Variant::PgNN: return "pgnn";
    case Variant::Arx: return "arx";
  }
  return "full";
}

Variant variant_from_str(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "no_prior") return Variant::NoPrior;
  if (s == "shuffled_prior") return Variant::ShuffledPrior;
  if (s == "no_adaptive_window") return Variant::NoAdaptiveWindow;
  if (s == "trend_only") return Variant::TrendOnly;
  if (s == "pgnn") return Variant::PgNN;
  if (s == "arx") return Variant::Arx;
  throw ContractError("unknown variant: " + s);
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || lr <= 0.0 || gate_lr_scale <= 0.0 || patience < 0) {
    throw ContractError("train config: hyperparameters must be positive");
  }
  if (clip_norm < 0.0) throw ContractError("train config: clip_norm must be >= 0");
  if (arx_p < 1 || arx_q < 1) throw ContractError("train config: ARX orders must be >= 1");
}

namespace {

nlohmann::json model_config_json(const DsprConfig& m) {
  nlohmann::json j;
  j["lookback"] = m.lookback;
  j["horizon"] = m.horizon;
  j["n_vars"] = m.n_vars;
  j["target"] = m.target;
  j["trend_d_model"] = m.trend_d_model;
  j["trend_depth"] = m.trend_depth;
  j["downsample_ratio"] = m.downsample_ratio;
  j["ma_kernel"] = m.ma_kernel;
  j["n_scales"] = m.n_scales;
  j["time_features"] = m.time_features;
  j["d_emb"] = m.d_emb;
  j["n_heads"] = m.n_heads;
  j["tau_max"] = m.tau_max;
  j["node_emb_dim"] = m.node_emb_dim;
  j["lambda_phys"] = m.lambda_phys;
  j["lambda_sparse"] = m.lambda_sparse;
  j["beta_init"] = m.beta_init;
  j["residual_stream"] = m.residual_stream;
  j["adaptive_window"] = m.adaptive_window;
  return j;
}

DsprConfig model_config_from_json(const nlohmann::json& j) {
  DsprConfig m;
  m.lookback = j.at("lookback").get<int64_t>();
  m.horizon = j.at("horizon").get<int64_t>();
  m.n_vars = j.at("n_vars").get<int64_t>();
  m.target = j.at("target").get<int64_t>();
  m.trend_d_model = j.at("trend_d_model").get<int64_t>();
  m.trend_depth = j.at("trend_depth").get<int64_t>();
  m.downsample_ratio = j.at("downsample_ratio").get<int64_t>();
  m.ma_kernel = j.at("ma_kernel").get<int64_t>();
  m.n_scales = j.at("n_scales").get<int64_t>();
  m.time_features = j.at("time_features").get<int64_t>();
  m.d_emb = j.at("d_emb").get<int64_t>();
  m.n_heads = j.at("n_heads").get<int64_t>();
  m.tau_max = j.at("tau_max").get<int64_t>();
  m.node_emb_dim = j.at("node_emb_dim").get<int64_t>();
  m.lambda_phys = j.at("lambda_phys").get<double>();
  m.lambda_sparse = j.at("lambda_sparse").get<double>();
  m.beta_init = j.at("beta_init").get<double>();
  m.residual_stream = j.at("residual_stream").get<bool>();
  m.adaptive_window = j.at("adaptive_window").get<bool>();
  return m;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["gate_lr_scale"] = cfg.gate_lr_scale;
  j["seed"] = cfg.seed;
  j["clip_norm"] = cfg.clip_norm;
  j["patience"] = cfg.patience;
  j["variant"] = variant_str(cfg.variant);
  j["pgnn_lambda"] = cfg.pgnn_lambda;
  j["arx_p"] = cfg.arx_p;
  j["arx_q"] = cfg.arx_q;
  j["model"] = model_config_json(cfg.model);
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  TrainConfig cfg;
  cfg.epochs = j.at("epochs").get<int64_t>();
  cfg.batch_size = j.at("batch_size").get<int64_t>();
  cfg.lr = j.at("lr").get<double>();
  cfg.gate_lr_scale = j.value("gate_lr_scale", 25.0);
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.clip_norm = j.at("clip_norm").get<double>();
  cfg.patience = j.at("patience").get<int64_t>();
  cfg.variant = variant_from_str(j.at("variant").get<std::string>());
  cfg.pgnn_lambda = j.at("pgnn_lambda").get<double>();
  cfg.arx_p = j.at("arx_p").get<int64_t>();
  cfg.arx_q = j.at("arx_q").get<int64_t>();
  cfg.model = model_config_from_json(j.at("model"));
  return cfg;
}

// ---- shared helpers -------------------------------------------------------------

std::vector<double> shuffle_prior_adjacency(const std::vector<double>& adj, int64_t n_vars,
                                            uint64_t seed) {
  Rng rng(seed);
  std::vector<int64_t> perm(static_cast<size_t>(n_vars));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> out = adj;
  for (int attempt = 0; attempt < 64; ++attempt) {
    rng.shuffle(perm);
    std::vector<double> cand(adj.size(), 0.0);
    for (int64_t i = 0; i < n_vars; ++i) {
      for (int64_t j = 0; j < n_vars; ++j) {
        cand[static_cast<size_t>(perm[static_cast<size_t>(i)] * n_vars +
                                 perm[static_cast<size_t>(j)])] =
            adj[static_cast<size_t>(i * n_vars + j)];
      }
    }
    out = cand;
    if (cand != adj) break;
  }
  return out;
}

Tensor pgnn_targets(const WindowBatch& batch, const WindowedData& data) {
  if (!data.dataset.f_cons) {
    throw ContractError("PG-NN unavailable: dataset exports no conservation surrogate");
  }
  const auto& law = *data.dataset.f_cons;
  const int64_t n = batch.n_vars, L = batch.lookback, H = batch.horizon;
  const int64_t target = data.dataset.target;
  std::vector<double> out(static_cast<size_t>(batch.count * H));
  std::vector<double> raw(static_cast<size_t>(n));
  for (int64_t b = 0; b < batch.count; ++b) {
    for (int64_t c = 0; c < n; ++c) {
      raw[static_cast<size_t>(c)] =
          data.norm.denormalize(batch.x[static_cast<size_t>((b * L + L - 1) * n + c)], c);
    }
    const double pred = data.norm.normalize(law.apply(raw.data(), n), target);
    for (int64_t h = 0; h < H; ++h) out[static_cast<size_t>(b * H + h)] = pred;
  }
  return Tensor::from({batch.count, H}, std::move(out));
}

namespace {

struct Predictions {
  Tensor y_hat;
  Tensor y;
};

// Chunked no-grad forward over a window list.
Predictions predict(const DsprModel& model, const WindowedData& data,
                    const std::vector<int64_t>& starts, int64_t chunk = 256) {
  NoGrad guard(model.tape());
  const int64_t S = static_cast<int64_t>(starts.size());
  const int64_t H = data.horizon;
  std::vector<double> hat(static_cast<size_t>(S * H)), truth(static_cast<size_t>(S * H));
  for (int64_t lo = 0; lo < S; lo += chunk) {
    const int64_t hi = std::min(S, lo + chunk);
    const WindowBatch batch = data.make_batch(
        std::vector<int64_t>(starts.begin() + lo, starts.begin() + hi));
    const ForwardOutput out = model.forward(batch);
    std::copy(out.y_hat.values().begin(), out.y_hat.values().end(),
              hat.begin() + lo * H);
    std::copy(batch.y.begin(), batch.y.end(), truth.begin() + lo * H);
  }
  return {Tensor::from({S, H}, std::move(hat)), Tensor::from({S, H}, std::move(truth))};
}

Tensor slice_horizon(const Tensor& m, int64_t cut) {
  const int64_t s = m.size(0);
  std::vector<double> out(static_cast<size_t>(s * cut));
  for (int64_t i = 0; i < s; ++i) {
    for (int64_t t = 0; t < cut; ++t) {
      out[static_cast<size_t>(i * cut + t)] = m.at(i, t);
    }
  }
  return Tensor::from({s, cut}, std::move(out));
}

Tensor gather_samples(const Tensor& m, const std::vector<int64_t>& rows) {
  const int64_t h = m.size(1);
  std::vector<double> out(rows.size() * static_cast<size_t>(h));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (int64_t t = 0; t < h; ++t) {
      out[i * static_cast<size_t>(h) + static_cast<size_t>(t)] = m.at(rows[i], t);
    }
  }
  return Tensor::from({static_cast<int64_t>(rows.size()), h}, std::move(out));
}

std::vector<MetricReport> horizon_cut_reports(const Tensor& y_hat, const Tensor& y,
                                              const EvalOptions& opts) {
  const int64_t H = y.size(1);
  const double delta = opts.tda_delta > 0.0 ? opts.tda_delta : tda_default_delta(y);
  std::set<int64_t> cuts{H};
  if (H / 2 >= 2) cuts.insert(H / 2);
  if (H / 4 >= 2) cuts.insert(H / 4);
  std::vector<MetricReport> reports;
  for (int64_t cut : cuts) {
    MetricReport r = evaluate_forecasts(slice_horizon(y_hat, cut), slice_horizon(y, cut),
                                        delta, opts.tda_segment);
    r.label = "h=" + std::to_string(cut);
    reports.push_back(r);
  }
  // Average row across the horizon cuts, mirroring the per-dataset "Avg"
  // convention of multi-horizon result tables.
  MetricReport avg;
  avg.label = "avg";
  avg.horizon = H;
  avg.n_samples = y.size(0);
  avg.tda_delta = delta;
  avg.tda_segment = opts.tda_segment;
  double tda_sum = 0.0;
  int64_t tda_n = 0;
  for (const auto& r : reports) {
    avg.mae += r.mae;
    avg.rmse += r.rmse;
    avg.mca += r.mca;
    avg.tvr += r.tvr;
    if (r.tda) {
      tda_sum += *r.tda;
      ++tda_n;
    }
  }
  const double k = static_cast<double>(reports.size());
  avg.mae /= k;
  avg.rmse /= k;
  avg.mca /= k;
  avg.tvr /= k;
  if (tda_n > 0) avg.tda = tda_sum / static_cast<double>(tda_n);
  avg.mca_clipped = std::clamp(avg.mca, 0.0, 100.0);
  avg.tvr_clipped = std::clamp(avg.tvr, 0.0, 100.0);
  reports.push_back(avg);
  return reports;
}

}  // namespace

EvalArtifacts evaluate_model(const DsprModel& model, const WindowedData& data,
                             const std::vector<int64_t>& starts, const EvalOptions& opts) {
  NoGrad guard(model.tape());
  const int64_t S = static_cast<int64_t>(starts.size());
  const int64_t H = data.horizon, L = data.lookback;
  const int64_t C = model.config().n_vars;
  const bool residual = model.config().residual_stream;

  EvalArtifacts art;
  std::vector<double> hat(static_cast<size_t>(S * H)), truth(static_cast<size_t>(S * H));
  std::vector<double> adj_acc(static_cast<size_t>(C * C), 0.0);
  std::vector<std::vector<double>> taus;
  std::vector<int64_t> gen_regime(static_cast<size_t>(S), -1);
  std::vector<double> sample_std(static_cast<size_t>(S), 0.0);

  constexpr int64_t kChunk = 256;
  for (int64_t lo = 0; lo < S; lo += kChunk) {
    const int64_t hi = std::min(S, lo + kChunk);
    const WindowBatch batch = data.make_batch(
        std::vector<int64_t>(starts.begin() + lo, starts.begin() + hi));
    const ForwardOutput out = model.forward(batch);
    std::copy(out.y_hat.values().begin(), out.y_hat.values().end(), hat.begin() + lo * H);
    std::copy(batch.y.begin(), batch.y.end(), truth.begin() + lo * H);
    for (int64_t b = 0; b < batch.count; ++b) {
      gen_regime[static_cast<size_t>(lo + b)] = batch.regime[static_cast<size_t>(b)];
      sample_std[static_cast<size_t>(lo + b)] = batch.sample_std[static_cast<size_t>(b)];
    }
    if (residual) {
      const auto& av = out.a_dynamic_mean.values();
      for (size_t i = 0; i < adj_acc.size(); ++i) {
        adj_acc[i] += av[i] * static_cast<double>(batch.count);
      }
      for (const auto& t : out.tau) taus.push_back(t);
    }
  }

  art.y_hat = Tensor::from({S, H}, std::move(hat));
  art.y = Tensor::from({S, H}, std::move(truth));
  if (residual && S > 0) {
    for (auto& v : adj_acc) v /= static_cast<double>(S);
    art.adjacency_mean = std::move(adj_acc);
  }

  art.reports = horizon_cut_reports(art.y_hat, art.y, opts);

  std::vector<std::string> tertile_label;
  if (opts.regimes) {
    const RegimePartition part = regime_split(sample_std);
    tertile_label.assign(static_cast<size_t>(S), "Medium");
    for (int64_t i : part.high) tertile_label[static_cast<size_t>(i)] = "High";
    for (int64_t i : part.low) tertile_label[static_cast<size_t>(i)] = "Low";
    const double delta =
        opts.tda_delta > 0.0 ? opts.tda_delta : tda_default_delta(art.y);
    for (const char* name : {"High", "Medium", "Low"}) {
      const auto& rows = part.group(name);
      if (rows.empty()) continue;
      MetricReport r = evaluate_forecasts(gather_samples(art.y_hat, rows),
                                          gather_samples(art.y, rows), delta,
                                          opts.tda_segment, name);
      r.label = std::string("regime=") + name;
      art.reports.push_back(r);
    }
  }

  if (residual) {
    for (int64_t s = 0; s < static_cast<int64_t>(taus.size()); ++s) {
      std::string label = "All";
      if (gen_regime[static_cast<size_t>(s)] >= 0) {
        label = std::to_string(gen_regime[static_cast<size_t>(s)]);
      } else if (opts.regimes) {
        label = tertile_label[static_cast<size_t>(s)];
      }
      for (int64_t c = 0; c < C; ++c) {
        for (int64_t t = 0; t < L; ++t) {
          art.delay_profile.push_back(
              {s, t, c, taus[static_cast<size_t>(s)][static_cast<size_t>(c * L + t)],
               label});
        }
      }
    }
  }
  return art;
}

// ---- training ---------------------------------------------------------------------

namespace {

double validation_mse(const DsprModel& model, const WindowedData& data) {
  const Predictions p = predict(model, data, data.val_starts);
  double acc = 0.0;
  for (int64_t i = 0; i < p.y_hat.numel(); ++i) {
    const double d = p.y_hat.at(i) - p.y.at(i);
    acc += d * d;
  }
  return acc / static_cast<double>(p.y_hat.numel());
}

RunRecord train_arx(const WindowedData& data, TrainConfig cfg, const std::string& out_dir,
                    const EvalOptions& eval_opts) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  const ArxModel arx = fit_arx(data, cfg.arx_p, cfg.arx_q);
  rec.config = cfg;

  const WindowBatch val = data.val_batch();
  const Tensor val_hat = arx_predictions(arx, val);
  const Tensor val_y = val.y_tensor();
  rec.val_mae = mae(val_hat, val_y);
  rec.val_rmse = rmse(val_hat, val_y);

  const WindowBatch test = data.test_batch();
  const Tensor test_hat = arx_predictions(arx, test);
  const Tensor test_y = test.y_tensor();
  rec.test_reports = horizon_cut_reports(test_hat, test_y, eval_opts);

  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    Checkpoint ckpt;
    ckpt.seed = cfg.seed;
    ckpt.config_json = train_config_to_json(cfg);
    ckpt.metrics = {{"val_mae", rec.val_mae},
                    {"val_rmse", rec.val_rmse},
                    {"arx_ridge_fallback", arx.ridge_fallback ? 1.0 : 0.0}};
    ckpt.params.push_back(
        {"arx.coef", Tensor::from({static_cast<int64_t>(arx.coef.size())}, arx.coef)});
    rec.checkpoint_path = (fs::path(out_dir) / "checkpoint.dspr").string();
    save_checkpoint(ckpt, rec.checkpoint_path);
    save_run_record(rec, (fs::path(out_dir) / "run_record.json").string());
  }
  return rec;
}

}  // namespace

RunRecord train_model(const WindowedData& data, const TrainConfig& cfg_in,
                      const std::string& out_dir, const EvalOptions& eval_opts) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  // The dataset is authoritative for the window geometry.
  cfg.model.n_vars = data.dataset.n_vars();
  cfg.model.target = data.dataset.target;
  cfg.model.lookback = data.lookback;
  cfg.model.horizon = data.horizon;
  cfg.model.time_features = data.time_features;
  switch (cfg.variant) {
    case Variant::TrendOnly:
    case Variant::PgNN:
      cfg.model.residual_stream = false;
      break;
    case Variant::NoAdaptiveWindow:
      cfg.model.adaptive_window = false;
      break;
    default:
      break;
  }
  if (cfg.variant == Variant::Arx) return train_arx(data, cfg, out_dir, eval_opts);
  if (cfg.variant == Variant::PgNN && !data.dataset.f_cons) {
    throw ContractError("PG-NN unavailable: dataset exports no conservation surrogate");
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> prior = data.dataset.prior.adjacency;
  if (cfg.variant == Variant::NoPrior) {
    std::fill(prior.begin(), prior.end(), 0.0);
  } else if (cfg.variant == Variant::ShuffledPrior) {
    prior = shuffle_prior_adjacency(prior, cfg.model.n_vars, cfg.seed);
  }

  Tape tape;
  DsprModel model(cfg.model, prior, tape, cfg.seed);
  Adam opt(model.parameters(), cfg.lr, 0.9, 0.999, 1e-8,
           {{"gate.beta", cfg.gate_lr_scale}});

  RunRecord rec;
  rec.config = cfg;

  Rng batch_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
  std::vector<int64_t> order = data.train_starts;

  std::vector<std::vector<double>> best_params;
  double best_val = std::numeric_limits<double>::infinity();
  int64_t since_best = 0;

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    batch_rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t n_batches = 0;
    for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg.batch_size));
      const WindowBatch batch = data.make_batch(
          std::vector<int64_t>(order.begin() + static_cast<int64_t>(lo),
                               order.begin() + static_cast<int64_t>(hi)));
      tape.reset();
      opt.zero_grad();
      Tensor loss;
      try {
        const ForwardOutput out = model.forward(batch);
        const Tensor y = batch.y_tensor();
        loss = cfg.variant == Variant::PgNN
                   ? pgnn_loss(out.y_hat, y, pgnn_targets(batch, data), cfg.pgnn_lambda)
                   : model.loss(out, y);
        if (!std::isfinite(loss.value())) {
          throw std::domain_error("loss is not finite");
        }
        tape.backward(loss);
      } catch (const std::domain_error& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(n_batches) + ": " + e.what());
      }
      opt.clip_global_norm(cfg.clip_norm);
      opt.step();
      loss_sum += loss.value();
      ++n_batches;
    }
    tape.reset();
    rec.train_loss.push_back(loss_sum / static_cast<double>(std::max<int64_t>(1, n_batches)));
    const double vloss = validation_mse(model, data);
    rec.val_loss.push_back(vloss);
    rec.gate_trajectory.push_back(
        cfg.model.residual_stream ? model.gate_value().value() : 0.0);
    rec.epochs_run = epoch + 1;

    if (vloss < best_val - 1e-12) {
      best_val = vloss;
      rec.best_epoch = epoch;
      since_best = 0;
      best_params.clear();
      for (const auto& p : opt.params()) best_params.push_back(p.tensor.values());
    } else {
      ++since_best;
      if (since_best > cfg.patience) break;
    }
  }
  rec.best_val_loss = best_val;

  // Restore the best checkpoint before the final evaluation.
  if (!best_params.empty()) {
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor t = params[i].tensor;  // handles share the node
      t.values() = best_params[i];
    }
  }

  {
    const Predictions val = predict(model, data, data.val_starts);
    rec.val_mae = mae(val.y_hat, val.y);
    rec.val_rmse = rmse(val.y_hat, val.y);
  }
  EvalArtifacts test = evaluate_model(model, data, data.test_starts, eval_opts);
  rec.test_reports = std::move(test.reports);
  rec.test_adjacency_mean = std::move(test.adjacency_mean);
  rec.test_delay_profile = std::move(test.delay_profile);

  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    Checkpoint ckpt;
    ckpt.seed = cfg.seed;
    ckpt.config_json = train_config_to_json(cfg);
    ckpt.metrics = {{"val_mae", rec.val_mae},
                    {"val_rmse", rec.val_rmse},
                    {"best_val_loss", rec.best_val_loss},
                    {"best_epoch", static_cast<double>(rec.best_epoch)}};
    for (const auto& p : model.parameters()) {
      ckpt.params.push_back({p.name, p.tensor.detach()});
    }
    rec.checkpoint_path = (fs::path(out_dir) / "checkpoint.dspr").string();
    save_checkpoint(ckpt, rec.checkpoint_path);
    save_run_record(rec, (fs::path(out_dir) / "run_record.json").string());
    if (!rec.test_delay_profile.empty()) {
      write_delay_profile_csv(rec.test_delay_profile, data.dataset.names,
                              (fs::path(out_dir) / "delay_profile.csv").string());
    }
    if (!rec.test_adjacency_mean.empty()) {
      write_adjacency_csv(rec.test_adjacency_mean, data.dataset.names,
                          (fs::path(out_dir) / "adjacency_mean.csv").string());
    }
  }
  return rec;
}

RestoredModel restore_model(const Checkpoint& ckpt, const PriorGraph& prior, Tape& tape) {
  RestoredModel out;
  out.config = train_config_from_json(ckpt.config_json);

  if (out.config.variant == Variant::Arx) {
    auto arx = std::make_unique<ArxModel>();
    arx->p = out.config.arx_p;
    arx->q = out.config.arx_q;
    arx->n_vars = out.config.model.n_vars;
    arx->target = out.config.model.target;
    for (const auto& p : ckpt.params) {
      if (p.name == "arx.coef") arx->coef = p.tensor.values();
    }
    if (arx->coef.empty()) throw std::runtime_error("checkpoint lacks ARX coefficients");
    auto it = ckpt.metrics.find("arx_ridge_fallback");
    arx->ridge_fallback = it != ckpt.metrics.end() && it->second != 0.0;
    out.arx = std::move(arx);
    return out;
  }

  std::vector<double> adjacency = prior.adjacency;
  if (out.config.variant == Variant::NoPrior) {
    std::fill(adjacency.begin(), adjacency.end(), 0.0);
  } else if (out.config.variant == Variant::ShuffledPrior) {
    adjacency = shuffle_prior_adjacency(adjacency, out.config.model.n_vars, out.config.seed);
  }
  out.model = std::make_unique<DsprModel>(out.config.model, adjacency, tape,
                                          out.config.seed);

  const auto params = out.model->parameters();
  if (params.size() != ckpt.params.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(ckpt.params.size()) +
                             " parameters, model expects " + std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& stored = ckpt.params[i];
    if (stored.name != params[i].name || stored.tensor.shape() != params[i].tensor.shape()) {
      throw std::runtime_error(
          "checkpoint/config mismatch at parameter " + std::to_string(i) + ": expected '" +
          params[i].name + "' " + shape_str(params[i].tensor.shape()) + ", found '" +
          stored.name + "' " + shape_str(stored.tensor.shape()));
    }
    Tensor t = params[i].tensor;
    t.values() = stored.tensor.values();
  }
  return out;
}

// ---- run record serialization --------------------------------------------------------

std::string run_record_to_json(const RunRecord& r) {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(train_config_to_json(r.config));
  j["epochs_run"] = r.epochs_run;
  j["best_epoch"] = r.best_epoch;
  j["best_val_loss"] = r.best_val_loss;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["gate_trajectory"] = r.gate_trajectory;
  j["val_mae"] = r.val_mae;
  j["val_rmse"] = r.val_rmse;
  j["test_reports"] = nlohmann::json::array();
  for (const auto& rep : r.test_reports) j["test_reports"].push_back(metric_report_json(rep));
  j["test_adjacency_mean"] = r.test_adjacency_mean;
  // Wall time and absolute paths are reported on stdout, not serialized:
  // emitted JSON must be bit-identical across same-seed runs regardless of
  // where the run directory lives.
  j["checkpoint"] = r.checkpoint_path.empty()
                        ? ""
                        : fs::path(r.checkpoint_path).filename().string();
  return j.dump(2);
}

void save_run_record(const RunRecord& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << run_record_to_json(r) << "\n";
}

// ---- ablations ------------------------------------------------------------------------

std::vector<AblationRow> run_ablation_suite(const WindowedData& data,
                                            const TrainConfig& base,
                                            const std::vector<Variant>& variants,
                                            const std::string& out_dir,
                                            std::vector<RunRecord>* records) {
  if (std::find(variants.begin(), variants.end(), Variant::Full) == variants.end()) {
    throw ContractError("ablation suite requires the full variant as the reference");
  }
  std::vector<AblationRow> rows;
  double full_mae = 0.0, full_rmse = 0.0;
  std::vector<RunRecord> local;
  for (Variant v : variants) {
    TrainConfig cfg = base;
    cfg.variant = v;
    const std::string dir =
        out_dir.empty() ? "" : out_dir + "/" + variant_str(v) + "_seed" +
                                   std::to_string(cfg.seed);
    RunRecord rec = train_model(data, cfg, dir);
    const MetricReport* full_h = nullptr;
    for (const auto& rep : rec.test_reports) {
      if (rep.label == "h=" + std::to_string(data.horizon)) full_h = &rep;
    }
    if (!full_h) throw ContractError("missing full-horizon report for " + variant_str(v));
    AblationRow row;
    row.variant = variant_str(v);
    row.mae = full_h->mae;
    row.rmse = full_h->rmse;
    if (v == Variant::Full) {
      full_mae = row.mae;
      full_rmse = row.rmse;
    }
    rows.push_back(row);
    local.push_back(std::move(rec));
  }
  for (auto& row : rows) {
    row.delta_mae_pct = (row.mae - full_mae) / full_mae * 100.0;
    row.delta_rmse_pct = (row.rmse - full_rmse) / full_rmse * 100.0;
  }
  if (records) *records = std::move(local);
  return rows;
}

// ---- ARX -------------------------------------------------------------------------------

namespace {

// Gaussian elimination with partial pivoting; returns false when a pivot
// underflows (singular system).
bool solve_linear(std::vector<double> a, std::vector<double> b, int64_t n,
                  std::vector<double>* x) {
  for (int64_t col = 0; col < n; ++col) {
    int64_t pivot = col;
    for (int64_t r = col + 1; r < n; ++r) {
      if (std::abs(a[static_cast<size_t>(r * n + col)]) >
          std::abs(a[static_cast<size_t>(pivot * n + col)])) {
        pivot = r;
      }
    }
    if (std::abs(a[static_cast<size_t>(pivot * n + col)]) < 1e-10) return false;
    if (pivot != col) {
      for (int64_t c = 0; c < n; ++c) {
        std::swap(a[static_cast<size_t>(col * n + c)], a[static_cast<size_t>(pivot * n + c)]);
      }
      std::swap(b[static_cast<size_t>(col)], b[static_cast<size_t>(pivot)]);
    }
    for (int64_t r = col + 1; r < n; ++r) {
      const double f = a[static_cast<size_t>(r * n + col)] /
                       a[static_cast<size_t>(col * n + col)];
      if (f == 0.0) continue;
      for (int64_t c = col; c < n; ++c) {
        a[static_cast<size_t>(r * n + c)] -= f * a[static_cast<size_t>(col * n + c)];
      }
      b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
    }
  }
  x->assign(static_cast<size_t>(n), 0.0);
  for (int64_t r = n - 1; r >= 0; --r) {
    double acc = b[static_cast<size_t>(r)];
    for (int64_t c = r + 1; c < n; ++c) {
      acc -= a[static_cast<size_t>(r * n + c)] * (*x)[static_cast<size_t>(c)];
    }
    (*x)[static_cast<size_t>(r)] = acc / a[static_cast<size_t>(r * n + r)];
  }
  return true;
}

}  // namespace

ArxModel fit_arx(const WindowedData& data, int64_t order_p, int64_t order_q) {
  if (order_p < 1 || order_q < 1) {
    throw ContractError("fit_arx: orders must be >= 1");
  }
  const int64_t n_vars = data.dataset.n_vars();
  const int64_t target = data.dataset.target;
  const int64_t maxlag = std::max(order_p, order_q);
  const int64_t k = order_p + (n_vars - 1) * order_q + 1;

  ArxModel model;
  model.p = order_p;
  model.q = order_q;
  model.n_vars = n_vars;
  model.target = target;

  const auto& v = data.norm_values;
  auto value = [&](int64_t t, int64_t c) { return v[static_cast<size_t>(t * n_vars + c)]; };

  std::vector<double> xtx(static_cast<size_t>(k * k), 0.0);
  std::vector<double> xty(static_cast<size_t>(k), 0.0);
  std::vector<double> feat(static_cast<size_t>(k));
  for (int64_t t = data.train_range.first + maxlag; t < data.train_range.second; ++t) {
    int64_t at = 0;
    for (int64_t i = 1; i <= order_p; ++i) feat[static_cast<size_t>(at++)] = value(t - i, target);
    for (int64_t c = 0; c < n_vars; ++c) {
      if (c == target) continue;
      for (int64_t l = 1; l <= order_q; ++l) feat[static_cast<size_t>(at++)] = value(t - l, c);
    }
    feat[static_cast<size_t>(at)] = 1.0;
    const double yt = value(t, target);
    for (int64_t i = 0; i < k; ++i) {
      xty[static_cast<size_t>(i)] += feat[static_cast<size_t>(i)] * yt;
      for (int64_t j = i; j < k; ++j) {
        xtx[static_cast<size_t>(i * k + j)] +=
            feat[static_cast<size_t>(i)] * feat[static_cast<size_t>(j)];
      }
    }
  }
  for (int64_t i = 0; i < k; ++i) {
    for (int64_t j = 0; j < i; ++j) {
      xtx[static_cast<size_t>(i * k + j)] = xtx[static_cast<size_t>(j * k + i)];
    }
  }

  if (!solve_linear(xtx, xty, k, &model.coef)) {
    std::vector<double> ridge = xtx;
    for (int64_t i = 0; i < k; ++i) ridge[static_cast<size_t>(i * k + i)] += 1e-6;
    if (!solve_linear(ridge, xty, k, &model.coef)) {
      throw std::runtime_error("fit_arx: normal equations unsolvable even with ridge");
    }
    model.ridge_fallback = true;
  }
  return model;
}

std::vector<double> ArxModel::forecast(const double* window, int64_t lookback,
                                       int64_t horizon) const {
  if (lookback < std::max(p, q)) {
    throw ContractError("arx forecast: lookback shorter than the model order");
  }
  std::vector<double> preds;
  preds.reserve(static_cast<size_t>(horizon));
  for (int64_t h = 1; h <= horizon; ++h) {
    const int64_t t = lookback - 1 + h;
    double acc = 0.0;
    int64_t at = 0;
    for (int64_t i = 1; i <= p; ++i) {
      const int64_t j = t - i;
      const double val = j < lookback ? window[j * n_vars + target]
                                      : preds[static_cast<size_t>(j - lookback)];
      acc += coef[static_cast<size_t>(at++)] * val;
    }
    for (int64_t c = 0; c < n_vars; ++c) {
      if (c == target) continue;
      for (int64_t l = 1; l <= q; ++l) {
        const int64_t j = std::min(t - l, lookback - 1);  // no future inputs
        acc += coef[static_cast<size_t>(at++)] * window[j * n_vars + c];
      }
    }
    acc += coef[static_cast<size_t>(at)];
    preds.push_back(acc);
  }
  return preds;
}

Tensor arx_predictions(const ArxModel& model, const WindowBatch& batch) {
  std::vector<double> out(static_cast<size_t>(batch.count * batch.horizon));
  for (int64_t b = 0; b < batch.count; ++b) {
    const double* window = &batch.x[static_cast<size_t>(b * batch.lookback * batch.n_vars)];
    const auto preds = model.forecast(window, batch.lookback, batch.horizon);
    std::copy(preds.begin(), preds.end(), out.begin() + b * batch.horizon);
  }
  return Tensor::from({batch.count, batch.horizon}, std::move(out));
}

// ---- mechanism stability -----------------------------------------------------------------

std::vector<std::pair<int64_t, int64_t>> top_k_edges(const std::vector<double>& adjacency,
                                                     int64_t n_vars, int64_t k) {
  std::vector<std::pair<int64_t, int64_t>> edges;
  for (int64_t i = 0; i < n_vars; ++i) {
    for (int64_t j = 0; j < n_vars; ++j) {
      if (i != j) edges.emplace_back(i, j);
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [&](const auto& a, const auto& b) {
    return adjacency[static_cast<size_t>(a.first * n_vars + a.second)] >
           adjacency[static_cast<size_t>(b.first * n_vars + b.second)];
  });
  if (static_cast<int64_t>(edges.size()) > k) edges.resize(static_cast<size_t>(k));
  return edges;
}

namespace {

double jaccard(const std::vector<std::pair<int64_t, int64_t>>& a,
               const std::vector<std::pair<int64_t, int64_t>>& b) {
  std::set<std::pair<int64_t, int64_t>> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  int64_t inter = 0;
  for (const auto& e : sa) inter += sb.count(e);
  const auto uni = static_cast<int64_t>(sa.size() + sb.size()) - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> offdiag(const std::vector<double>& adj, int64_t n) {
  std::vector<double> out;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      if (i != j) out.push_back(adj[static_cast<size_t>(i * n + j)]);
    }
  }
  return out;
}

// Average ranks with tie midpoints.
std::vector<double> ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t p = i; p <= j; ++p) r[order[p]] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(ra.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 1.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace

StabilityResult mechanism_stability(const std::vector<std::vector<double>>& adjacency_means,
                                    int64_t n_vars, int64_t top_k) {
  if (adjacency_means.size() < 2) {
    throw ContractError("mechanism_stability: need at least 2 runs");
  }
  StabilityResult res;
  int64_t pairs = 0;
  for (size_t a = 0; a < adjacency_means.size(); ++a) {
    for (size_t b = a + 1; b < adjacency_means.size(); ++b) {
      res.jaccard_top_k += jaccard(top_k_edges(adjacency_means[a], n_vars, top_k),
                                   top_k_edges(adjacency_means[b], n_vars, top_k));
      res.rank_correlation += spearman(offdiag(adjacency_means[a], n_vars),
                                       offdiag(adjacency_means[b], n_vars));
      ++pairs;
    }
  }
  res.jaccard_top_k /= static_cast<double>(pairs);
  res.rank_correlation /= static_cast<double>(pairs);
  return res;
}

}  // namespace dspr
