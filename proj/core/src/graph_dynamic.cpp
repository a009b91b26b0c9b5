#include "dspr/graph_dynamic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dspr {

bool window_allows(int64_t t, int64_t k, double tau, int64_t tau_max) {
  if (k > t || k < 0) return false;
  const double clamped = std::clamp(tau, 1.0, static_cast<double>(tau_max));
  const int64_t width = std::clamp<int64_t>(std::llround(clamped), 1, tau_max);
  return k >= std::max<int64_t>(0, t - width);
}

WindowMask WindowMask::from_tau(const std::vector<double>& tau_ct, int64_t T, int64_t C,
                                int64_t tau_max) {
  if (static_cast<int64_t>(tau_ct.size()) != T * C) {
    throw ShapeError("window_mask: tau has " + std::to_string(tau_ct.size()) +
                     " entries, expected " + std::to_string(T * C));
  }
  WindowMask m;
  m.T = T;
  m.C = C;
  m.vals.assign(static_cast<size_t>(C * T * T), kMaskNegInf);
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t t = 0; t < T; ++t) {
      const double tau = tau_ct[static_cast<size_t>(c * T + t)];
      for (int64_t k = 0; k <= t; ++k) {
        if (window_allows(t, k, tau, tau_max)) {
          m.vals[static_cast<size_t>((c * T + t) * T + k)] = 0.0;
        }
      }
    }
  }
  return m;
}

WindowMask WindowMask::causal(int64_t T, int64_t C) {
  WindowMask m;
  m.T = T;
  m.C = C;
  m.vals.assign(static_cast<size_t>(C * T * T), kMaskNegInf);
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t t = 0; t < T; ++t) {
      for (int64_t k = 0; k <= t; ++k) {
        m.vals[static_cast<size_t>((c * T + t) * T + k)] = 0.0;
      }
    }
  }
  return m;
}

Tensor dynamic_adjacency(const Tensor& h_t) {
  if (h_t.rank() != 2) {
    throw ShapeError("dynamic_adjacency: expected node features [CxD], got " +
                     shape_str(h_t.shape()));
  }
  const int64_t c = h_t.size(0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(h_t.size(1)));
  Tensor scores = mul(matmul(h_t, transpose(h_t)), scale);
  std::vector<double> diag(static_cast<size_t>(c * c), 0.0);
  for (int64_t i = 0; i < c; ++i) diag[static_cast<size_t>(i * c + i)] = kMaskNegInf;
  return softmax_rows(add(scores, Tensor::from({c, c}, std::move(diag))));
}

void DynamicBranchConfig::validate() const {
  if (tau_max < 1) throw ContractError("dynamic branch: tau_max must be >= 1");
  if (n_heads < 1 || d_emb % n_heads != 0) {
    throw ContractError("dynamic branch: head count must divide d_emb (" +
                        std::to_string(n_heads) + " vs " + std::to_string(d_emb) + ")");
  }
  if (d_emb % 2 != 0) throw ContractError("dynamic branch: d_emb must be even");
}

namespace {

constexpr double kEdgeSlope = 2.0;

double log_sigmoid(double u) {
  return u >= 0.0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u));
}

// Hard adaptive window plus differentiable edge. Forward adds, per query t:
//   kMaskNegInf            outside [max(0, t - round(tau_t)), t]
//   log sigmoid(slope*(tau_t - lag))   inside the window
// so attention outside the window is exactly zero after softmax while the
// effective width stays differentiable in tau through the edge term.
Tensor adaptive_window_scores(const Tensor& scores, const Tensor& tau_col, int64_t tau_max) {
  const int64_t T = scores.size(0);
  if (scores.rank() != 2 || scores.size(1) != T) {
    throw ShapeError("adaptive window: scores must be square, got " +
                     shape_str(scores.shape()));
  }
  if (tau_col.numel() != T) {
    throw ShapeError("adaptive window: tau " + shape_str(tau_col.shape()) +
                     " does not match " + std::to_string(T) + " query steps");
  }
  Tape* tape = scores.tape() ? scores.tape() : tau_col.tape();
  if (scores.tape() && tau_col.tape() && scores.tape() != tau_col.tape()) {
    throw ContractError("adaptive window: operands belong to different tapes");
  }
  if (tape && !tape->recording()) tape = nullptr;
  const bool grad = tape && (scores.requires_grad() || tau_col.requires_grad());
  Tensor out = Tensor::make_node({T, T}, grad ? tape : nullptr, grad);

  const auto& sv = scores.values();
  const auto& tv = tau_col.values();
  auto& ov = out.values();
  for (int64_t t = 0; t < T; ++t) {
    const double tau = tv[static_cast<size_t>(t)];
    for (int64_t k = 0; k < T; ++k) {
      const size_t idx = static_cast<size_t>(t * T + k);
      if (window_allows(t, k, tau, tau_max)) {
        ov[idx] = sv[idx] + log_sigmoid(kEdgeSlope * (tau - static_cast<double>(t - k)));
      } else {
        ov[idx] = sv[idx] + kMaskNegInf;
      }
    }
  }

  if (grad) {
    Tensor ts = scores, tt = tau_col, to = out;
    tape->record([ts, tt, to, T, tau_max]() mutable {
      const auto& g = to.grad_buffer();
      const auto& tv2 = tt.values();
      if (ts.requires_grad()) {
        auto& gs = ts.grad_buffer();
        for (size_t i = 0; i < gs.size(); ++i) gs[i] += g[i];
      }
      if (tt.requires_grad()) {
        auto& gt = tt.grad_buffer();
        for (int64_t t = 0; t < T; ++t) {
          const double tau = tv2[static_cast<size_t>(t)];
          double acc = 0.0;
          for (int64_t k = 0; k <= t; ++k) {
            if (!window_allows(t, k, tau, tau_max)) continue;
            const double u = kEdgeSlope * (tau - static_cast<double>(t - k));
            const double sig_neg = u >= 0.0 ? std::exp(-u) / (1.0 + std::exp(-u))
                                            : 1.0 / (1.0 + std::exp(u));
            acc += g[static_cast<size_t>(t * T + k)] * kEdgeSlope * sig_neg;
          }
          gt[static_cast<size_t>(t)] += acc;
        }
      }
    });
  }
  return out;
}

std::vector<double> fan_init(Rng& rng, int64_t fan_in, int64_t count) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_vec(static_cast<size_t>(count), -bound, bound);
}

}  // namespace

DynamicBranch::DynamicBranch(const DynamicBranchConfig& cfg, Tape& tape, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int64_t c = cfg_.n_vars, d = cfg_.d_emb;
  w_emb_.reserve(static_cast<size_t>(c));
  for (int64_t i = 0; i < c; ++i) {
    w_emb_.push_back(tape.parameter({c, d}, fan_init(rng, c, c * d)));
  }
  b_emb_ = tape.parameter({c, d}, fan_init(rng, c, c * d));
  w_tau_ = tape.parameter({d, 1}, fan_init(rng, d, d));
  w_d_ = tape.parameter({d, d / 2}, fan_init(rng, d, d * (d / 2)));
  b_d_ = tape.parameter({d / 2}, fan_init(rng, d, d / 2));
  w_g_ = tape.parameter({d, d / 2}, fan_init(rng, d, d * (d / 2)));
  const int64_t dh = d / cfg_.n_heads;
  for (int64_t h = 0; h < cfg_.n_heads; ++h) {
    w_q_.push_back(tape.parameter({d, dh}, fan_init(rng, d, d * dh)));
    w_k_.push_back(tape.parameter({d, dh}, fan_init(rng, d, d * dh)));
    w_v_.push_back(tape.parameter({d, dh}, fan_init(rng, d, d * dh)));
  }
  w_o_ = tape.parameter({d, d / 2}, fan_init(rng, d, d * (d / 2)));
}

Tensor DynamicBranch::embed_sequence(const Tensor& x) const {
  if (x.rank() != 2 || x.size(1) != cfg_.n_vars) {
    throw ShapeError("embed_sequence: input " + shape_str(x.shape()) + ", expected [Lx" +
                     std::to_string(cfg_.n_vars) + "]");
  }
  std::vector<Tensor> blocks;
  blocks.reserve(w_emb_.size());
  for (int64_t c = 0; c < cfg_.n_vars; ++c) {
    Tensor bias_row = slice_rows(b_emb_, c, c + 1);  // 1 x D, broadcast over L
    blocks.push_back(add(matmul(x, w_emb_[static_cast<size_t>(c)]), bias_row));
  }
  return concat_rows(blocks);
}

Tensor DynamicBranch::adaptive_tau(const Tensor& h_flat) const {
  const int64_t rows = h_flat.size(0);
  if (rows % cfg_.n_vars != 0) {
    throw ShapeError("adaptive_tau: " + shape_str(h_flat.shape()) +
                     " rows are not a multiple of the channel count");
  }
  Tensor s = sigmoid(matmul(h_flat, w_tau_));  // (C*T) x 1
  Tensor tau = add(mul(s, static_cast<double>(cfg_.tau_max - 1)), 1.0);
  return reshape(tau, {cfg_.n_vars, rows / cfg_.n_vars});
}

Tensor DynamicBranch::attention_adaptive(const Tensor& h_flat, const Tensor& tau) const {
  return attention_impl(h_flat, &tau, nullptr);
}

Tensor DynamicBranch::attention_with_mask(const Tensor& h_flat, const WindowMask& mask) const {
  return attention_impl(h_flat, nullptr, &mask);
}

Tensor DynamicBranch::attention_impl(const Tensor& h_flat, const Tensor* tau,
                                     const WindowMask* mask) const {
  const int64_t c_total = cfg_.n_vars;
  const int64_t d = cfg_.d_emb;
  if (h_flat.rank() != 2 || h_flat.size(1) != d || h_flat.size(0) % c_total != 0) {
    throw ShapeError("attention: features " + shape_str(h_flat.shape()) + ", expected [(C*T)x" +
                     std::to_string(d) + "]");
  }
  const int64_t T = h_flat.size(0) / c_total;
  if (mask && (mask->T != T || mask->C != c_total)) {
    throw ShapeError("attention: mask size " + std::to_string(mask->T) + "/" +
                     std::to_string(mask->C) + " does not match the sequence");
  }
  const int64_t dh = d / cfg_.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> channel_out;
  channel_out.reserve(static_cast<size_t>(c_total));
  for (int64_t c = 0; c < c_total; ++c) {
    Tensor h_c = slice_rows(h_flat, c * T, (c + 1) * T);  // T x D
    Tensor tau_c;
    Tensor mask_c;
    if (tau) {
      tau_c = reshape(slice_rows(*tau, c, c + 1), {T, 1});
    } else {
      std::vector<double> mv(mask->vals.begin() + c * T * T,
                             mask->vals.begin() + (c + 1) * T * T);
      mask_c = Tensor::from({T, T}, std::move(mv));
    }
    Tensor heads;
    for (int64_t h = 0; h < cfg_.n_heads; ++h) {
      Tensor q = matmul(h_c, w_q_[static_cast<size_t>(h)]);
      Tensor k = matmul(h_c, w_k_[static_cast<size_t>(h)]);
      Tensor v = matmul(h_c, w_v_[static_cast<size_t>(h)]);
      Tensor scores = mul(matmul(q, transpose(k)), scale);
      scores = tau ? adaptive_window_scores(scores, tau_c, cfg_.tau_max)
                   : add(scores, mask_c);
      Tensor o = matmul(softmax_rows(scores), v);  // T x dh
      heads = h == 0 ? o : concat_last_axis(heads, o);
    }
    channel_out.push_back(matmul(heads, w_o_));  // T x D/2
  }
  return concat_rows(channel_out);
}

Tensor DynamicBranch::dynamic_gcn(const Tensor& h_t, const Tensor& a_dyn) const {
  return relu(add(matmul(matmul(a_dyn, h_t), w_d_), b_d_));
}

Tensor DynamicBranch::gated_fuse(const Tensor& h_t, const Tensor& h_sp,
                                 const Tensor& h_tmp) const {
  if (h_sp.shape() != h_tmp.shape()) {
    throw ShapeError("gated_fuse: branch shapes disagree, " + shape_str(h_sp.shape()) +
                     " and " + shape_str(h_tmp.shape()));
  }
  Tensor gate = sigmoid(matmul(h_t, w_g_));
  Tensor one_minus = sub(Tensor::scalar(1.0), gate);
  return add(mul(gate, h_sp), mul(one_minus, h_tmp));
}

void DynamicBranch::collect_parameters(std::vector<NamedTensor>& out,
                                       const std::string& prefix) const {
  for (size_t c = 0; c < w_emb_.size(); ++c) {
    out.push_back({prefix + ".w_emb" + std::to_string(c), w_emb_[c]});
  }
  out.push_back({prefix + ".b_emb", b_emb_});
  out.push_back({prefix + ".w_tau", w_tau_});
  out.push_back({prefix + ".w_d", w_d_});
  out.push_back({prefix + ".b_d", b_d_});
  out.push_back({prefix + ".w_g", w_g_});
  for (int64_t h = 0; h < cfg_.n_heads; ++h) {
    const std::string hs = std::to_string(h);
    out.push_back({prefix + ".w_q" + hs, w_q_[static_cast<size_t>(h)]});
    out.push_back({prefix + ".w_k" + hs, w_k_[static_cast<size_t>(h)]});
    out.push_back({prefix + ".w_v" + hs, w_v_[static_cast<size_t>(h)]});
  }
  out.push_back({prefix + ".w_o", w_o_});
}

}  // namespace dspr
