#include "dspr/model.hpp"

#include <cmath>
#include <memory>

#include "dspr/rng.hpp"

namespace dspr {

TrendConfig DsprConfig::trend() const {
  TrendConfig t;
  t.lookback = lookback;
  t.horizon = horizon;
  t.n_vars = n_vars;
  t.d_model = trend_d_model;
  t.depth = trend_depth;
  t.downsample_ratio = downsample_ratio;
  t.ma_kernel = ma_kernel;
  t.n_scales = n_scales;
  t.time_features = time_features;
  return t;
}

DynamicBranchConfig DsprConfig::dynamic() const {
  DynamicBranchConfig d;
  d.n_vars = n_vars;
  d.d_emb = d_emb;
  d.n_heads = n_heads;
  d.tau_max = tau_max;
  return d;
}

void DsprConfig::validate() const {
  trend().validate();
  if (residual_stream) dynamic().validate();
  if (target < 0 || target >= n_vars) {
    throw ContractError("model: target index out of range");
  }
  if (lambda_phys < 0.0 || lambda_sparse < 0.0) {
    throw ContractError("model: loss weights must be nonnegative");
  }
}

DsprModel::DsprModel(const DsprConfig& cfg, const PriorGraph& prior, Tape& tape,
                     uint64_t seed)
    : cfg_(cfg), prior_adj_(prior.adjacency) {
  prior.validate();
  if (prior.n_vars() != cfg.n_vars) {
    throw ShapeError("model: prior has " + std::to_string(prior.n_vars()) +
                     " variables, config expects " + std::to_string(cfg.n_vars));
  }
  init(tape, seed);
}

DsprModel::DsprModel(const DsprConfig& cfg, std::vector<double> prior_adjacency, Tape& tape,
                     uint64_t seed)
    : cfg_(cfg), prior_adj_(std::move(prior_adjacency)) {
  if (static_cast<int64_t>(prior_adj_.size()) != cfg.n_vars * cfg.n_vars) {
    throw ShapeError("model: prior adjacency has " + std::to_string(prior_adj_.size()) +
                     " entries, expected " + std::to_string(cfg.n_vars * cfg.n_vars));
  }
  init(tape, seed);
}

void DsprModel::init(Tape& tape, uint64_t seed) {
  cfg_.validate();
  tape_ = &tape;
  const int64_t c = cfg_.n_vars;
  prior_tensor_ = Tensor::from({c, c}, prior_adj_);
  std::vector<double> off(prior_adj_.size());
  for (size_t i = 0; i < off.size(); ++i) off[i] = 1.0 - prior_adj_[i];
  offprior_mask_ = Tensor::from({c, c}, std::move(off));

  Rng rng(seed);
  trend_ = std::make_unique<TrendStream>(cfg_.trend(), tape, rng);
  if (cfg_.residual_stream) {
    static_branch_ =
        std::make_unique<StaticBranch>(c, cfg_.node_emb_dim, cfg_.d_emb, tape, rng);
    dynamic_branch_ = std::make_unique<DynamicBranch>(cfg_.dynamic(), tape, rng);
    const int64_t fuse_in = c * cfg_.d_emb;  // C x (D/2 + D/2) flattened
    const double bound = 1.0 / std::sqrt(static_cast<double>(fuse_in));
    w_fuse_ = tape.parameter({fuse_in, cfg_.horizon},
                             rng.uniform_vec(static_cast<size_t>(fuse_in * cfg_.horizon),
                                             -bound, bound));
    b_fuse_ = tape.parameter({cfg_.horizon},
                             rng.uniform_vec(static_cast<size_t>(cfg_.horizon), -bound, bound));
    beta_ = tape.parameter({1}, {cfg_.beta_init});
  }
}

ForwardOutput DsprModel::forward(const WindowBatch& batch) const {
  if (batch.lookback != cfg_.lookback || batch.horizon != cfg_.horizon ||
      batch.n_vars != cfg_.n_vars || batch.time_features != cfg_.time_features) {
    throw ShapeError("forward: batch windows [L=" + std::to_string(batch.lookback) +
                     ",H=" + std::to_string(batch.horizon) + ",N=" +
                     std::to_string(batch.n_vars) + "] do not match config [L=" +
                     std::to_string(cfg_.lookback) + ",H=" + std::to_string(cfg_.horizon) +
                     ",N=" + std::to_string(cfg_.n_vars) + "]");
  }
  const int64_t B = batch.count, H = cfg_.horizon, L = cfg_.lookback, C = cfg_.n_vars;

  ForwardOutput out;
  std::vector<Tensor> base_rows, delta_rows, hat_rows;

  if (cfg_.residual_stream) {
    out.gate = sigmoid(beta_);
    out.a_static = static_branch_->adjacency(prior_tensor_);
  }

  Tensor adj_sum;
  for (int64_t b = 0; b < B; ++b) {
    Tensor x = batch.x_tensor(b);
    Tensor tf = batch.time_feats_tensor(b);
    Tensor y_base = reshape(trend_->forward(x, tf), {1, H});
    base_rows.push_back(y_base);

    if (!cfg_.residual_stream) {
      hat_rows.push_back(y_base);
      continue;
    }

    Tensor h_all = dynamic_branch_->embed_sequence(x);  // (C*L) x D
    std::vector<int64_t> last_rows(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) last_rows[static_cast<size_t>(c)] = c * L + (L - 1);
    Tensor h_last = gather_rows(h_all, last_rows);  // C x D

    Tensor z_static = static_branch_->context(h_last, out.a_static);  // C x D/2

    Tensor a_dyn = dynamic_adjacency(h_last);  // C x C
    adj_sum = b == 0 ? a_dyn : add(adj_sum, a_dyn);

    Tensor h_sp = dynamic_branch_->dynamic_gcn(h_last, a_dyn);  // C x D/2

    Tensor tau = dynamic_branch_->adaptive_tau(h_all);  // C x L
    out.tau.push_back(tau.values());
    Tensor h_tmp_seq;
    if (cfg_.adaptive_window) {
      h_tmp_seq = dynamic_branch_->attention_adaptive(h_all, tau);
    } else {
      h_tmp_seq = dynamic_branch_->attention_with_mask(h_all, WindowMask::causal(L, C));
    }
    Tensor h_tmp = gather_rows(h_tmp_seq, last_rows);  // C x D/2

    Tensor z_dynamic = dynamic_branch_->gated_fuse(h_last, h_sp, h_tmp);

    Tensor fused = reshape(concat_last_axis(z_static, z_dynamic), {1, C * cfg_.d_emb});
    Tensor delta = add(matmul(fused, w_fuse_), b_fuse_);  // 1 x H
    delta_rows.push_back(delta);
    hat_rows.push_back(add(y_base, mul(delta, out.gate)));
  }

  out.y_base = B == 1 ? base_rows[0] : concat_rows(base_rows);
  out.y_hat = B == 1 ? hat_rows[0] : concat_rows(hat_rows);
  if (cfg_.residual_stream) {
    out.delta_y = B == 1 ? delta_rows[0] : concat_rows(delta_rows);
    out.a_dynamic_mean = mul(adj_sum, 1.0 / static_cast<double>(B));
  } else {
    out.delta_y = Tensor::zeros({B, H});
  }
  return out;
}

Tensor DsprModel::loss(const ForwardOutput& out, const Tensor& y) const {
  Tensor total = mse_loss(out.y_hat, y);
  if (!cfg_.residual_stream) return total;

  if (cfg_.lambda_phys > 0.0) {
    // Deviation from the prior, restricted to the confirmed dependencies.
    Tensor dev = mul(sub(out.a_static, prior_tensor_), prior_tensor_);
    total = add(total, mul(sum_all(mul(dev, dev)), cfg_.lambda_phys));
  }
  if (cfg_.lambda_sparse > 0.0) {
    // L1 of nonnegative adjacency entries off the prior support reduces to
    // their plain sum.
    total = add(total, mul(sum_all(mul(out.a_dynamic_mean, offprior_mask_)),
                           cfg_.lambda_sparse));
  }
  return total;
}

std::vector<NamedTensor> DsprModel::parameters() const {
  std::vector<NamedTensor> params;
  trend_->collect_parameters(params, "trend");
  if (cfg_.residual_stream) {
    static_branch_->collect_parameters(params, "static");
    dynamic_branch_->collect_parameters(params, "dynamic");
    params.push_back({"fuse.w", w_fuse_});
    params.push_back({"fuse.b", b_fuse_});
    params.push_back({"gate.beta", beta_});
  }
  return params;
}

Tensor pgnn_loss(const Tensor& y_hat, const Tensor& y, const Tensor& f_cons_pred,
                 double lambda_phy) {
  Tensor total = mse_loss(y_hat, y);
  if (lambda_phy != 0.0) {
    total = add(total, mul(mse_loss(y_hat, f_cons_pred), lambda_phy));
  }
  return total;
}

}  // namespace dspr
