#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dspr/rng.hpp"
#include "dspr/tensor.hpp"

namespace dspr {

enum class VariableRole { Actuator, State, Target };

std::string role_str(VariableRole r);
VariableRole role_from_str(const std::string& s);

/// Binary physics-consistent interaction mask with variable roles.
/// Invariants: zero diagonal, entries in {0,1}, at least one edge into the
/// target, exactly one target variable.
struct PriorGraph {
  std::vector<std::string> names;
  std::vector<VariableRole> roles;
  std::vector<double> adjacency;  // C x C row-major

  int64_t n_vars() const { return static_cast<int64_t>(roles.size()); }
  double at(int64_t src, int64_t dst) const {
    return adjacency[static_cast<size_t>(src * n_vars() + dst)];
  }
  int64_t target_index() const;
  std::vector<std::pair<int64_t, int64_t>> edges() const;
  void validate() const;

  Tensor adjacency_tensor() const;  // constant C x C
};

/// Rule-based construction: one edge from every actuator into the target,
/// plus the confirmed state edges, zero diagonal, zero elsewhere.
PriorGraph build_prior(const std::vector<std::string>& names,
                       const std::vector<VariableRole>& roles,
                       const std::vector<std::pair<int64_t, int64_t>>& confirmed_edges);

// JSON document {variables:[{name, role}], edges:[[src,dst],...]}.
std::string prior_to_json(const PriorGraph& g);
PriorGraph prior_from_json(const std::string& text);
void save_prior(const PriorGraph& g, const std::string& path);
PriorGraph load_prior(const std::string& path);

/// Static branch: fuses the physical prior with a learned softmax similarity
/// graph, then aggregates and projects node features to the static context.
class StaticBranch {
 public:
  StaticBranch(int64_t n_vars, int64_t emb_dim, int64_t d_emb, Tape& tape, Rng& rng);

  /// sigmoid(raw_lambda), in (0,1) by construction.
  Tensor fusion_lambda() const { return sigmoid(raw_lambda_); }

  /// A = lambda * prior + (1-lambda) * softmax(relu(E E^T)).
  Tensor adjacency(const Tensor& prior) const;

  /// Z = (A x_emb) W_s + b_s, projecting C x D down to C x D/2.
  Tensor context(const Tensor& x_emb, const Tensor& a_static) const;

  void collect_parameters(std::vector<NamedTensor>& out, const std::string& prefix) const;

  const Tensor& embeddings() const { return embeddings_; }
  Tensor& raw_lambda() { return raw_lambda_; }

 private:
  int64_t n_vars_;
  Tensor embeddings_;  // C x emb_dim
  Tensor raw_lambda_;  // scalar
  Tensor w_s_, b_s_;   // D x D/2, D/2
};

}  // namespace dspr
