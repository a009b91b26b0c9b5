#include "dspr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dspr {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void ensure_finite(const Tensor& t, const char* op_name) {
  if (!all_finite(t.values())) {
    throw std::domain_error(std::string(op_name) + " produced non-finite values");
  }
}

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.node_ = std::make_shared<detail::Node>();
  t.node_->shape = std::move(shape);
  t.node_->value = std::move(values);
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double v) {
  const auto n = static_cast<size_t>(shape_numel(shape));
  return from(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::value() const {
  if (numel() != 1) {
    throw ContractError("value() requires a scalar tensor, got " + shape_str(shape()));
  }
  return node_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!node_ || node_->grad.empty()) {
    throw ContractError("gradient not populated; run backward() first");
  }
  return node_->grad;
}

std::vector<double>& Tensor::grad_buffer() {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
}

Tensor Tensor::detach() const {
  Tensor t;
  t.node_ = std::make_shared<detail::Node>();
  t.node_->shape = node_->shape;
  t.node_->value = node_->value;
  return t;
}

Tensor Tensor::make_node(Shape shape, Tape* tape, bool requires_grad) {
  Tensor t;
  t.node_ = std::make_shared<detail::Node>();
  t.node_->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  t.node_->shape = std::move(shape);
  t.node_->tape = tape;
  t.node_->requires_grad = requires_grad;
  return t;
}

// ---- Tape ---------------------------------------------------------------

Tensor Tape::parameter(Shape shape, std::vector<double> init) {
  Tensor t = Tensor::from(std::move(shape), std::move(init));
  t.node()->tape = this;
  t.node()->requires_grad = true;
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  if (loss.tape() != this) {
    throw ContractError("backward: loss was not recorded on this tape");
  }
  Tensor seed = loss;
  seed.grad_buffer()[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// ---- op plumbing ----------------------------------------------------------

namespace {

Tape* result_tape(std::initializer_list<const Tensor*> ins) {
  Tape* tape = nullptr;
  for (const Tensor* x : ins) {
    Tape* xt = x->tape();
    if (!xt) continue;
    if (tape && xt != tape) {
      throw ContractError("operands belong to different tapes");
    }
    tape = xt;
  }
  if (tape && !tape->recording()) return nullptr;
  return tape;
}

bool wants_grad(std::initializer_list<const Tensor*> ins) {
  for (const Tensor* x : ins) {
    if (x->requires_grad()) return true;
  }
  return false;
}

// Builds the output node and decides whether the op must be recorded.
struct OpResult {
  Tensor out;
  bool taped;
};

OpResult make_result(Shape shape, std::initializer_list<const Tensor*> ins) {
  Tape* tape = result_tape(ins);
  const bool grad = tape != nullptr && wants_grad(ins);
  return {Tensor::make_node(std::move(shape), grad ? tape : nullptr, grad), grad};
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " +
                     shape_str(t.shape()));
  }
}

enum class Broadcast { Same, AScalar, BScalar, ARow, BRow };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (a.numel() == 1) return Broadcast::AScalar;
  if (b.numel() == 1) return Broadcast::BScalar;
  auto is_row_of = [](const Tensor& bias, const Tensor& m) {
    if (m.rank() != 2) return false;
    const int64_t n = m.size(1);
    return (bias.rank() == 1 && bias.size(0) == n) ||
           (bias.rank() == 2 && bias.size(0) == 1 && bias.size(1) == n);
  };
  if (is_row_of(b, a)) return Broadcast::BRow;
  if (is_row_of(a, b)) return Broadcast::ARow;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()));
}

// Shared elementwise kernel covering the three permitted broadcast forms.
// f computes the value, dfa/dfb the partials w.r.t. each operand.
template <typename F, typename DFA, typename DFB>
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* op, F f, DFA dfa, DFB dfb) {
  const Broadcast mode = classify(a, b, op);
  const Tensor& big = (mode == Broadcast::AScalar || mode == Broadcast::ARow) ? b : a;
  auto [out, taped] = make_result(big.shape(), {&a, &b});

  const int64_t n = big.numel();
  const int64_t cols = (mode == Broadcast::ARow || mode == Broadcast::BRow) ? big.size(1) : 0;
  auto index_a = [mode, cols](int64_t i) -> int64_t {
    if (mode == Broadcast::AScalar) return 0;
    if (mode == Broadcast::ARow) return i % cols;
    return i;
  };
  auto index_b = [mode, cols](int64_t i) -> int64_t {
    if (mode == Broadcast::BScalar) return 0;
    if (mode == Broadcast::BRow) return i % cols;
    return i;
  };

  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (int64_t i = 0; i < n; ++i) {
    ov[static_cast<size_t>(i)] = f(av[static_cast<size_t>(index_a(i))],
                                   bv[static_cast<size_t>(index_b(i))]);
  }
  ensure_finite(out, op);

  if (taped) {
    Tensor ta = a, tb = b, to = out;
    out.tape()->record([ta, tb, to, index_a, index_b, n, f, dfa, dfb]() mutable {
      const auto& g = to.grad_buffer();
      const auto& av2 = ta.values();
      const auto& bv2 = tb.values();
      if (ta.requires_grad()) {
        auto& ga = ta.grad_buffer();
        for (int64_t i = 0; i < n; ++i) {
          const auto ia = static_cast<size_t>(index_a(i));
          ga[ia] += g[static_cast<size_t>(i)] *
                    dfa(av2[ia], bv2[static_cast<size_t>(index_b(i))]);
        }
      }
      if (tb.requires_grad()) {
        auto& gb = tb.grad_buffer();
        for (int64_t i = 0; i < n; ++i) {
          const auto ib = static_cast<size_t>(index_b(i));
          gb[ib] += g[static_cast<size_t>(i)] *
                    dfb(av2[static_cast<size_t>(index_a(i))], bv2[ib]);
        }
      }
    });
  }
  return out;
}

}  // namespace

// ---- ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.size(1) != b.size(0)) {
    throw ShapeError("matmul: inner axes disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int64_t m = a.size(0), k = a.size(1), n = b.size(1);
  auto [out, taped] = make_result({m, n}, {&a, &b});

  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      const double aip = av[static_cast<size_t>(i * k + p)];
      if (aip == 0.0) continue;
      const size_t brow = static_cast<size_t>(p * n);
      const size_t orow = static_cast<size_t>(i * n);
      for (int64_t j = 0; j < n; ++j) {
        ov[orow + static_cast<size_t>(j)] += aip * bv[brow + static_cast<size_t>(j)];
      }
    }
  }
  ensure_finite(out, "matmul");

  if (taped) {
    Tensor ta = a, tb = b, to = out;
    out.tape()->record([ta, tb, to, m, k, n]() mutable {
      const auto& g = to.grad_buffer();
      // dA = dC * B^T
      if (ta.requires_grad()) {
        auto& ga = ta.grad_buffer();
        const auto& bv2 = tb.values();
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) {
              acc += g[static_cast<size_t>(i * n + j)] * bv2[static_cast<size_t>(p * n + j)];
            }
            ga[static_cast<size_t>(i * k + p)] += acc;
          }
        }
      }
      // dB = A^T * dC
      if (tb.requires_grad()) {
        auto& gb = tb.grad_buffer();
        const auto& av2 = ta.values();
        for (int64_t p = 0; p < k; ++p) {
          for (int64_t i = 0; i < m; ++i) {
            const double aip = av2[static_cast<size_t>(i * k + p)];
            if (aip == 0.0) continue;
            for (int64_t j = 0; j < n; ++j) {
              gb[static_cast<size_t>(p * n + j)] += aip * g[static_cast<size_t>(i * n + j)];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_ew(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor add(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
Tensor mul(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }

Tensor relu(const Tensor& x) {
  auto [out, taped] = make_result(x.shape(), {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  ensure_finite(out, "relu");
  if (taped) {
    Tensor tx = x, to = out;
    out.tape()->record([tx, to]() mutable {
      const auto& g = to.grad_buffer();
      const auto& xv2 = tx.values();
      auto& gx = tx.grad_buffer();
      for (size_t i = 0; i < xv2.size(); ++i) {
        if (xv2[i] > 0.0) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  auto [out, taped] = make_result(x.shape(), {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    ov[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  ensure_finite(out, "sigmoid");
  if (taped) {
    Tensor tx = x, to = out;
    out.tape()->record([tx, to]() mutable {
      const auto& g = to.grad_buffer();
      const auto& yv = to.values();
      auto& gx = tx.grad_buffer();
      for (size_t i = 0; i < yv.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  const int64_t m = x.size(0), n = x.size(1);
  auto [out, taped] = make_result(x.shape(), {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int64_t i = 0; i < m; ++i) {
    const size_t row = static_cast<size_t>(i * n);
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < n; ++j) mx = std::max(mx, xv[row + static_cast<size_t>(j)]);
    if (mx <= kMaskNegInf) {
      throw ContractError("softmax_rows: fully masked row " + std::to_string(i));
    }
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double v = xv[row + static_cast<size_t>(j)];
      // Sentinel entries are forced to exactly zero; everything else goes
      // through the max-shifted exponential.
      const double e = v <= kMaskNegInf ? 0.0 : std::exp(v - mx);
      ov[row + static_cast<size_t>(j)] = e;
      sum += e;
    }
    for (int64_t j = 0; j < n; ++j) ov[row + static_cast<size_t>(j)] /= sum;
  }
  ensure_finite(out, "softmax_rows");
  if (taped) {
    Tensor tx = x, to = out;
    out.tape()->record([tx, to, m, n]() mutable {
      const auto& g = to.grad_buffer();
      const auto& yv = to.values();
      auto& gx = tx.grad_buffer();
      for (int64_t i = 0; i < m; ++i) {
        const size_t row = static_cast<size_t>(i * n);
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          dot += g[row + static_cast<size_t>(j)] * yv[row + static_cast<size_t>(j)];
        }
        for (int64_t j = 0; j < n; ++j) {
          const size_t idx = row + static_cast<size_t>(j);
          gx[idx] += yv[idx] * (g[idx] - dot);
        }
      }
    });
  }
  return out;
}

Tensor concat_last_axis(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1) {
    throw ShapeError("concat_last_axis: rank mismatch, " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  for (int i = 0; i + 1 < a.rank(); ++i) {
    if (a.size(i) != b.size(i)) {
      throw ShapeError("concat_last_axis: non-last axes disagree, " +
                       shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
  }
  Shape shape = a.shape();
  const int64_t ca = a.size(a.rank() - 1), cb = b.size(b.rank() - 1);
  shape.back() = ca + cb;
  const int64_t rows = shape_numel(shape) / (ca + cb);
  auto [out, taped] = make_result(shape, {&a, &b});
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * ca, ca, ov.begin() + r * (ca + cb));
    std::copy_n(bv.begin() + r * cb, cb, ov.begin() + r * (ca + cb) + ca);
  }
  if (taped) {
    Tensor ta = a, tb = b, to = out;
    out.tape()->record([ta, tb, to, rows, ca, cb]() mutable {
      const auto& g = to.grad_buffer();
      if (ta.requires_grad()) {
        auto& ga = ta.grad_buffer();
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t j = 0; j < ca; ++j) {
            ga[static_cast<size_t>(r * ca + j)] += g[static_cast<size_t>(r * (ca + cb) + j)];
          }
        }
      }
      if (tb.requires_grad()) {
        auto& gb = tb.grad_buffer();
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t j = 0; j < cb; ++j) {
            gb[static_cast<size_t>(r * cb + j)] +=
                g[static_cast<size_t>(r * (ca + cb) + ca + j)];
          }
        }
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("concat_rows: empty input");
  const int64_t n = xs[0].rank() == 2 ? xs[0].size(1) : -1;
  int64_t rows = 0;
  std::vector<const Tensor*> ptrs;
  for (const auto& x : xs) {
    require_rank2(x, "concat_rows");
    if (x.size(1) != n) {
      throw ShapeError("concat_rows: column counts disagree, " + shape_str(xs[0].shape()) +
                       " and " + shape_str(x.shape()));
    }
    rows += x.size(0);
    ptrs.push_back(&x);
  }
  Tape* tape = nullptr;
  bool grad = false;
  for (const auto& x : xs) {
    if (x.tape()) {
      if (tape && tape != x.tape()) throw ContractError("operands belong to different tapes");
      tape = x.tape();
    }
    grad = grad || x.requires_grad();
  }
  if (tape && !tape->recording()) tape = nullptr;
  grad = grad && tape != nullptr;
  Tensor out = Tensor::make_node({rows, n}, grad ? tape : nullptr, grad);
  auto& ov = out.values();
  int64_t at = 0;
  for (const auto& x : xs) {
    std::copy(x.values().begin(), x.values().end(), ov.begin() + at);
    at += x.numel();
  }
  if (grad) {
    std::vector<Tensor> parts = xs;
    Tensor to = out;
    tape->record([parts, to]() mutable {
      const auto& g = to.grad_buffer();
      size_t at2 = 0;
      for (auto& p : parts) {
        const size_t np = static_cast<size_t>(p.numel());
        if (p.requires_grad()) {
          auto& gp = p.grad_buffer();
          for (size_t i = 0; i < np; ++i) gp[i] += g[at2 + i];
        }
        at2 += np;
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const int64_t m = x.size(0), n = x.size(1);
  auto [out, taped] = make_result({n, m}, {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      ov[static_cast<size_t>(j * m + i)] = xv[static_cast<size_t>(i * n + j)];
    }
  }
  if (taped) {
    Tensor tx = x, to = out;
    out.tape()->record([tx, to, m, n]() mutable {
      const auto& g = to.grad_buffer();
      auto& gx = tx.grad_buffer();
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
          gx[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j * m + i)];
        }
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
  require_rank2(x, "gather_rows");
  const int64_t m = x.size(0), n = x.size(1);
  for (int64_t r : rows) {
    if (r < 0 || r >= m) {
      throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " +
                       shape_str(x.shape()));
    }
  }
  auto [out, taped] = make_result({static_cast<int64_t>(rows.size()), n}, {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(xv.begin() + rows[i] * n, n, ov.begin() + static_cast<int64_t>(i) * n);
  }
  if (taped) {
    Tensor tx = x, to = out;
    std::vector<int64_t> idx = rows;
    out.tape()->record([tx, to, idx, n]() mutable {
      const auto& g = to.grad_buffer();
      auto& gx = tx.grad_buffer();
      for (size_t i = 0; i < idx.size(); ++i) {
        for (int64_t j = 0; j < n; ++j) {
          gx[static_cast<size_t>(idx[i] * n + j)] +=
              g[static_cast<size_t>(static_cast<int64_t>(i) * n + j)];
        }
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1) {
  require_rank2(x, "slice_rows");
  if (r0 < 0 || r1 > x.size(0) || r0 >= r1) {
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                     ") invalid for " + shape_str(x.shape()));
  }
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(r1 - r0));
  for (int64_t r = r0; r < r1; ++r) idx.push_back(r);
  return gather_rows(x, idx);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  auto [out, taped] = make_result(std::move(shape), {&x});
  out.values() = x.values();
  if (taped) {
    Tensor tx = x, to = out;
    out.tape()->record([tx, to]() mutable {
      const auto& g = to.grad_buffer();
      auto& gx = tx.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  auto [out, taped] = make_result({1}, {&x});
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  ensure_finite(out, "sum_all");
  if (taped) {
    Tensor tx = x, to = out;
    out.tape()->record([tx, to]() mutable {
      const double g = to.grad_buffer()[0];
      auto& gx = tx.grad_buffer();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  return mul(sum_all(x), inv);
}

Tensor mean_rows(const Tensor& x) {
  require_rank2(x, "mean_rows");
  const int64_t m = x.size(0), n = x.size(1);
  auto [out, taped] = make_result({1, n}, {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      ov[static_cast<size_t>(j)] += xv[static_cast<size_t>(i * n + j)];
    }
  }
  for (int64_t j = 0; j < n; ++j) ov[static_cast<size_t>(j)] /= static_cast<double>(m);
  ensure_finite(out, "mean_rows");
  if (taped) {
    Tensor tx = x, to = out;
    out.tape()->record([tx, to, m, n]() mutable {
      const auto& g = to.grad_buffer();
      auto& gx = tx.grad_buffer();
      const double inv = 1.0 / static_cast<double>(m);
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
          gx[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j)] * inv;
        }
      }
    });
  }
  return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: shapes disagree, " + shape_str(pred.shape()) + " and " +
                     shape_str(target.shape()));
  }
  auto [out, taped] = make_result({1}, {&pred, &target});
  const auto& pv = pred.values();
  const auto& tv = target.values();
  double acc = 0.0;
  for (size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - tv[i];
    acc += d * d;
  }
  out.values()[0] = acc / static_cast<double>(pv.size());
  ensure_finite(out, "mse_loss");
  if (taped) {
    Tensor tp = pred, tt = target, to = out;
    out.tape()->record([tp, tt, to]() mutable {
      const double g = to.grad_buffer()[0];
      const auto& pv2 = tp.values();
      const auto& tv2 = tt.values();
      const double scale = 2.0 * g / static_cast<double>(pv2.size());
      if (tp.requires_grad()) {
        auto& gp = tp.grad_buffer();
        for (size_t i = 0; i < pv2.size(); ++i) gp[i] += scale * (pv2[i] - tv2[i]);
      }
      if (tt.requires_grad()) {
        auto& gt = tt.grad_buffer();
        for (size_t i = 0; i < pv2.size(); ++i) gt[i] -= scale * (pv2[i] - tv2[i]);
      }
    });
  }
  return out;
}

Tensor moving_average(const Tensor& x, int64_t kernel, int axis) {
  require_rank2(x, "moving_average");
  if (kernel < 1 || kernel % 2 == 0) {
    throw ContractError("moving_average: kernel must be odd and positive, got " +
                        std::to_string(kernel));
  }
  if (axis != 0 && axis != 1) {
    throw ContractError("moving_average: axis must be 0 or 1");
  }
  const int64_t m = x.size(0), n = x.size(1);
  const int64_t len = axis == 0 ? m : n;
  const int64_t half = kernel / 2;
  auto [out, taped] = make_result(x.shape(), {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  auto idx = [axis, n](int64_t along, int64_t other) -> size_t {
    return axis == 0 ? static_cast<size_t>(along * n + other)
                     : static_cast<size_t>(other * n + along);
  };
  const int64_t lanes = axis == 0 ? n : m;
  for (int64_t lane = 0; lane < lanes; ++lane) {
    for (int64_t t = 0; t < len; ++t) {
      double acc = 0.0;
      for (int64_t o = -half; o <= half; ++o) {
        // Edge padding: indices clamp to the valid range, repeating endpoints.
        const int64_t s = std::clamp<int64_t>(t + o, 0, len - 1);
        acc += xv[idx(s, lane)];
      }
      ov[idx(t, lane)] = acc / static_cast<double>(kernel);
    }
  }
  ensure_finite(out, "moving_average");
  if (taped) {
    Tensor tx = x, to = out;
    out.tape()->record([tx, to, len, lanes, half, kernel, idx]() mutable {
      const auto& g = to.grad_buffer();
      auto& gx = tx.grad_buffer();
      const double inv = 1.0 / static_cast<double>(kernel);
      for (int64_t lane = 0; lane < lanes; ++lane) {
        for (int64_t t = 0; t < len; ++t) {
          const double gt = g[idx(t, lane)] * inv;
          for (int64_t o = -half; o <= half; ++o) {
            const int64_t s = std::clamp<int64_t>(t + o, 0, len - 1);
            gx[idx(s, lane)] += gt;
          }
        }
      }
    });
  }
  return out;
}

Tensor mean_pool_cols(const Tensor& x, int64_t ratio) {
  require_rank2(x, "mean_pool_cols");
  if (ratio < 1) throw ContractError("mean_pool_cols: ratio must be >= 1");
  const int64_t m = x.size(0), n = x.size(1);
  const int64_t n_out = (n + ratio - 1) / ratio;
  auto [out, taped] = make_result({m, n_out}, {&x});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t gcol = 0; gcol < n_out; ++gcol) {
      const int64_t c0 = gcol * ratio;
      const int64_t c1 = std::min(n, c0 + ratio);
      double acc = 0.0;
      for (int64_t c = c0; c < c1; ++c) acc += xv[static_cast<size_t>(i * n + c)];
      ov[static_cast<size_t>(i * n_out + gcol)] = acc / static_cast<double>(c1 - c0);
    }
  }
  if (taped) {
    Tensor tx = x, to = out;
    out.tape()->record([tx, to, m, n, n_out, ratio]() mutable {
      const auto& g = to.grad_buffer();
      auto& gx = tx.grad_buffer();
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t gcol = 0; gcol < n_out; ++gcol) {
          const int64_t c0 = gcol * ratio;
          const int64_t c1 = std::min(n, c0 + ratio);
          const double gv = g[static_cast<size_t>(i * n_out + gcol)] /
                            static_cast<double>(c1 - c0);
          for (int64_t c = c0; c < c1; ++c) gx[static_cast<size_t>(i * n + c)] += gv;
        }
      }
    });
  }
  return out;
}

}  // namespace dspr
