#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dspr {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

/// Shape or dimension mismatch between operands. The message names both shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Violation of an operation's contract (non-scalar loss, even kernel, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

class Tape;

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value once touched by the tape
  bool requires_grad = false;
  Tape* tape = nullptr;  // non-owning; null for constants / detached tensors
};
}  // namespace detail

/// Dense row-major tensor of doubles. Value-semantic handle: copies share the
/// underlying node, so a parameter updated in place is seen by every holder.
///
/// Tensors participate in reverse-mode differentiation when they were created
/// on a Tape (directly as parameters or as outputs of ops whose inputs carry
/// one). Constants built through the static factories have no tape and no
/// gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& values() { return node_->value; }
  double value() const;  // scalar tensors only

  double at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }
  double at(int64_t r, int64_t c) const {
    return node_->value[static_cast<size_t>(r * node_->shape[1] + c)];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<double>& grad() const;
  std::vector<double>& grad_buffer();  // allocates (zeroed) if absent
  void zero_grad();

  /// Same values, no tape, no gradient: a constant snapshot.
  Tensor detach() const;

  Tape* tape() const { return node_ ? node_->tape : nullptr; }

  // Op-builder surface (used by the op implementations; not part of the
  // everyday API).
  static Tensor make_node(Shape shape, Tape* tape, bool requires_grad);
  detail::Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of executed differentiable ops (a Wengert list). Each op
/// appends one backward closure as it runs; backward() replays them in
/// reverse, which is a valid reverse topological order because every op's
/// inputs exist before the op executes.
///
/// A tape and the tensors recorded on it belong to one logical execution
/// context; concurrent mutation is not supported. Read-only (detached)
/// tensors may be shared freely.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf tensor with requires_grad set; survives reset().
  Tensor parameter(Shape shape, std::vector<double> init);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the recorded ops once, in reverse.
  /// Gradients accumulate into every requires_grad node reachable from loss.
  void backward(const Tensor& loss);

  /// Drops recorded ops (and with them the intermediate nodes their closures
  /// keep alive). Parameters and their gradients are untouched.
  void reset() { ops_.clear(); }

  size_t op_count() const { return ops_.size(); }

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }

 private:
  std::vector<std::function<void()>> ops_;
  bool recording_ = true;
};

/// Pauses tape recording for the enclosing scope (evaluation mode).
class NoGrad {
 public:
  explicit NoGrad(Tape& tape) : tape_(tape), prev_(tape.recording()) {
    tape_.set_recording(false);
  }
  ~NoGrad() { tape_.set_recording(prev_); }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

// Sentinel used to force exact-zero attention weights through the stabilized
// softmax without introducing non-finite arithmetic.
inline constexpr double kMaskNegInf = -1e30;

/// A parameter tensor with its checkpoint name.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// ---- differentiable ops -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise add. Also accepts a row-vector bias (shape {n} or {1,n} added
/// to every row of an {m,n} tensor) and scalar-tensor broadcast; any other
/// shape mix is a ShapeError.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise or scalar broadcast

Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Row-wise stabilized softmax of a 2-D tensor. Entries at or below the
/// kMaskNegInf sentinel come out exactly 0.
Tensor softmax_rows(const Tensor& x);

/// Concatenate along the last axis; all other axes must agree.
Tensor concat_last_axis(const Tensor& a, const Tensor& b);

/// Stack 2-D tensors with equal column counts along axis 0.
Tensor concat_rows(const std::vector<Tensor>& xs);

Tensor transpose(const Tensor& x);

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1);

/// Same data, new shape (numel must match). Gradient is a reshape as well.
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Column means of a 2-D tensor: {m,n} -> {1,n}.
Tensor mean_rows(const Tensor& x);

/// Mean squared error over all entries; scalar output.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Centered moving average with edge-clamped window along `axis` (0 = down
/// each column, 1 = along each row). Kernel must be odd.
Tensor moving_average(const Tensor& x, int64_t kernel, int axis);

/// Mean-pool groups of `ratio` columns; a short trailing group is averaged
/// over its actual width. {m,n} -> {m, ceil(n/ratio)}.
Tensor mean_pool_cols(const Tensor& x, int64_t ratio);

// ---- helpers ------------------------------------------------------------

void ensure_finite(const Tensor& t, const char* op_name);
bool all_finite(const std::vector<double>& v);

}  // namespace dspr
