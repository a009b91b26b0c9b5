#include "dspr/graph_static.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dspr {

std::string role_str(VariableRole r) {
  switch (r) {
    case VariableRole::Actuator: return "actuator";
    case VariableRole::State: return "state";
    case VariableRole::Target: return "target";
  }
  return "state";
}

VariableRole role_from_str(const std::string& s) {
  if (s == "actuator") return VariableRole::Actuator;
  if (s == "state") return VariableRole::State;
  if (s == "target") return VariableRole::Target;
  throw ContractError("unknown variable role: " + s);
}

int64_t PriorGraph::target_index() const {
  int64_t idx = -1;
  for (size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == VariableRole::Target) {
      if (idx >= 0) throw ContractError("prior graph has multiple target variables");
      idx = static_cast<int64_t>(i);
    }
  }
  if (idx < 0) throw ContractError("prior graph has no target variable");
  return idx;
}

std::vector<std::pair<int64_t, int64_t>> PriorGraph::edges() const {
  std::vector<std::pair<int64_t, int64_t>> out;
  const int64_t c = n_vars();
  for (int64_t i = 0; i < c; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      if (at(i, j) != 0.0) out.emplace_back(i, j);
    }
  }
  return out;
}

void PriorGraph::validate() const {
  const int64_t c = n_vars();
  if (names.size() != roles.size()) {
    throw ContractError("prior graph: names and roles disagree in length");
  }
  if (static_cast<int64_t>(adjacency.size()) != c * c) {
    throw ShapeError("prior graph: adjacency has " + std::to_string(adjacency.size()) +
                     " entries for " + std::to_string(c) + " variables");
  }
  const int64_t target = target_index();
  bool target_has_parent = false;
  for (int64_t i = 0; i < c; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      const double v = at(i, j);
      if (v != 0.0 && v != 1.0) {
        throw ContractError("prior graph: entry (" + std::to_string(i) + "," +
                            std::to_string(j) + ") is not binary");
      }
      if (i == j && v != 0.0) {
        throw ContractError("prior graph: self-loop at " + std::to_string(i));
      }
      if (j == target && v != 0.0) target_has_parent = true;
    }
  }
  if (!target_has_parent) {
    throw ContractError("prior graph: no edge into the target variable");
  }
}

Tensor PriorGraph::adjacency_tensor() const {
  return Tensor::from({n_vars(), n_vars()}, adjacency);
}

PriorGraph build_prior(const std::vector<std::string>& names,
                       const std::vector<VariableRole>& roles,
                       const std::vector<std::pair<int64_t, int64_t>>& confirmed_edges) {
  if (names.size() != roles.size()) {
    throw ContractError("build_prior: roles must cover all variables");
  }
  PriorGraph g;
  g.names = names;
  g.roles = roles;
  const int64_t c = g.n_vars();
  g.adjacency.assign(static_cast<size_t>(c * c), 0.0);
  const int64_t target = g.target_index();
  for (int64_t i = 0; i < c; ++i) {
    if (roles[static_cast<size_t>(i)] == VariableRole::Actuator) {
      g.adjacency[static_cast<size_t>(i * c + target)] = 1.0;
    }
  }
  for (auto [src, dst] : confirmed_edges) {
    if (src < 0 || src >= c || dst < 0 || dst >= c) {
      throw ContractError("build_prior: edge (" + std::to_string(src) + "," +
                          std::to_string(dst) + ") references an unknown variable");
    }
    if (src == dst) {
      throw ContractError("build_prior: self-loop (" + std::to_string(src) + "," +
                          std::to_string(dst) + ") rejected");
    }
    g.adjacency[static_cast<size_t>(src * c + dst)] = 1.0;
  }
  g.validate();
  return g;
}

std::string prior_to_json(const PriorGraph& g) {
  nlohmann::json doc;
  doc["variables"] = nlohmann::json::array();
  for (size_t i = 0; i < g.names.size(); ++i) {
    doc["variables"].push_back({{"name", g.names[i]}, {"role", role_str(g.roles[i])}});
  }
  doc["edges"] = nlohmann::json::array();
  for (auto [src, dst] : g.edges()) {
    doc["edges"].push_back({src, dst});
  }
  return doc.dump(2);
}

PriorGraph prior_from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  std::vector<std::string> names;
  std::vector<VariableRole> roles;
  for (const auto& v : doc.at("variables")) {
    names.push_back(v.at("name").get<std::string>());
    roles.push_back(role_from_str(v.at("role").get<std::string>()));
  }
  PriorGraph g;
  g.names = std::move(names);
  g.roles = std::move(roles);
  const int64_t c = g.n_vars();
  g.adjacency.assign(static_cast<size_t>(c * c), 0.0);
  for (const auto& e : doc.at("edges")) {
    const auto src = e.at(0).get<int64_t>();
    const auto dst = e.at(1).get<int64_t>();
    if (src < 0 || src >= c || dst < 0 || dst >= c) {
      throw ContractError("prior json: edge out of range");
    }
    g.adjacency[static_cast<size_t>(src * c + dst)] = 1.0;
  }
  g.validate();
  return g;
}

void save_prior(const PriorGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << prior_to_json(g) << "\n";
}

PriorGraph load_prior(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return prior_from_json(ss.str());
}

// ---- StaticBranch ---------------------------------------------------------

StaticBranch::StaticBranch(int64_t n_vars, int64_t emb_dim, int64_t d_emb, Tape& tape,
                           Rng& rng)
    : n_vars_(n_vars) {
  if (d_emb % 2 != 0) {
    throw ContractError("static branch: embedding dimension must be even, got " +
                        std::to_string(d_emb));
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(emb_dim));
  embeddings_ = tape.parameter({n_vars, emb_dim},
                               rng.uniform_vec(static_cast<size_t>(n_vars * emb_dim),
                                               -bound, bound));
  raw_lambda_ = tape.parameter({1}, {0.0});  // lambda starts at 0.5
  const double wb = 1.0 / std::sqrt(static_cast<double>(d_emb));
  w_s_ = tape.parameter({d_emb, d_emb / 2},
                        rng.uniform_vec(static_cast<size_t>(d_emb * (d_emb / 2)), -wb, wb));
  b_s_ = tape.parameter({d_emb / 2},
                        rng.uniform_vec(static_cast<size_t>(d_emb / 2), -wb, wb));
}

Tensor StaticBranch::adjacency(const Tensor& prior) const {
  if (prior.rank() != 2 || prior.size(0) != n_vars_ || prior.size(1) != n_vars_) {
    throw ShapeError("static_adjacency: prior " + shape_str(prior.shape()) + ", expected [" +
                     std::to_string(n_vars_) + "x" + std::to_string(n_vars_) + "]");
  }
  Tensor learned = softmax_rows(relu(matmul(embeddings_, transpose(embeddings_))));
  Tensor lambda = fusion_lambda();
  Tensor one_minus = sub(Tensor::scalar(1.0), lambda);
  return add(mul(prior, lambda), mul(learned, one_minus));
}

Tensor StaticBranch::context(const Tensor& x_emb, const Tensor& a_static) const {
  return add(matmul(matmul(a_static, x_emb), w_s_), b_s_);
}

void StaticBranch::collect_parameters(std::vector<NamedTensor>& out,
                                      const std::string& prefix) const {
  out.push_back({prefix + ".embeddings", embeddings_});
  out.push_back({prefix + ".raw_lambda", raw_lambda_});
  out.push_back({prefix + ".w_s", w_s_});
  out.push_back({prefix + ".b_s", b_s_});
}

}  // namespace dspr
