#pragma once

#include <string>
#include <vector>

#include "dspr/rng.hpp"
#include "dspr/tensor.hpp"

namespace dspr {

/// Hard attention mask over (channel, query time, key time). Entries are 0
/// where attention is permitted and kMaskNegInf elsewhere. Causal by
/// construction: no key after the query is ever allowed.
struct WindowMask {
  int64_t T = 0;
  int64_t C = 0;
  std::vector<double> vals;  // (c, t, k) row-major

  double at(int64_t t, int64_t k, int64_t c) const {
    return vals[static_cast<size_t>((c * T + t) * T + k)];
  }

  /// Window [max(0, t - round(tau_{t,c})), t]; tau is clamped to
  /// [1, tau_max] before rounding.
  static WindowMask from_tau(const std::vector<double>& tau_ct /* (c,t) row-major */,
                             int64_t T, int64_t C, int64_t tau_max);

  /// Full causal prefix [0, t]; used by the no-adaptive-window variant.
  static WindowMask causal(int64_t T, int64_t C);
};

/// Whether key k is inside the hard window of query t given a continuous tau.
bool window_allows(int64_t t, int64_t k, double tau, int64_t tau_max);

/// Row-stochastic similarity graph over node features at one timestep:
/// softmax(h h^T / sqrt(D)) with the diagonal masked to exactly zero.
Tensor dynamic_adjacency(const Tensor& h_t);

struct DynamicBranchConfig {
  int64_t n_vars = 5;   // C (== N: every observed variable is a node)
  int64_t d_emb = 64;   // D
  int64_t n_heads = 4;
  int64_t tau_max = 20;

  void validate() const;
};

/// Dynamic branch: per-node input embedding, learned per-channel receptive
/// fields (transport delays), windowed per-channel temporal attention, dynamic
/// graph convolution and gated fusion.
class DynamicBranch {
 public:
  DynamicBranch(const DynamicBranchConfig& cfg, Tape& tape, Rng& rng);

  /// x: L x N. Returns node features in channel-major layout (C*L) x D; the
  /// feature of node c at time t lives in row c*L + t. Every node embeds the
  /// full observation vector through its own map: h_{t,c} = x_t W_c + b_c.
  Tensor embed_sequence(const Tensor& x) const;

  /// tau = 1 + (tau_max - 1) * sigmoid(h W_tau), shaped {C, T} to match the
  /// channel-major feature layout.
  Tensor adaptive_tau(const Tensor& h_flat) const;

  /// Per-channel multi-head attention over time through the adaptive window.
  /// Outside the hard window (rounded tau) attention is exactly zero; inside,
  /// a log-sigmoid edge term keeps the window width differentiable in tau.
  /// Returns (C*T) x (D/2).
  Tensor attention_adaptive(const Tensor& h_flat, const Tensor& tau) const;

  /// Same attention but through an explicit hard mask (no tau gradient).
  Tensor attention_with_mask(const Tensor& h_flat, const WindowMask& mask) const;

  /// ReLU(A h_t W_d + b_d): C x D -> C x D/2.
  Tensor dynamic_gcn(const Tensor& h_t, const Tensor& a_dyn) const;

  /// g = sigmoid(h_t W_g); g*h_sp + (1-g)*h_tmp, elementwise convex blend.
  Tensor gated_fuse(const Tensor& h_t, const Tensor& h_sp, const Tensor& h_tmp) const;

  void collect_parameters(std::vector<NamedTensor>& out, const std::string& prefix) const;

  const DynamicBranchConfig& config() const { return cfg_; }

 private:
  Tensor attention_impl(const Tensor& h_flat, const Tensor* tau,
                        const WindowMask* mask) const;

  DynamicBranchConfig cfg_;
  std::vector<Tensor> w_emb_;  // per node: N x D
  Tensor b_emb_;               // C x D
  Tensor w_tau_;               // D x 1
  Tensor w_d_, b_d_;           // D x D/2, D/2
  Tensor w_g_;                 // D x D/2
  std::vector<Tensor> w_q_, w_k_, w_v_;  // per head: D x D_h
  Tensor w_o_;                 // D x D/2
};

}  // namespace dspr
