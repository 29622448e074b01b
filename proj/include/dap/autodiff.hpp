#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dap/tensor.hpp"

namespace dap {

/// A named model tensor. Frozen parameters never require gradients, so the
/// tape never writes into them and optimizers leave their bytes untouched.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool is_frozen = false)
      : name(std::move(n)), value(std::move(v)), frozen(is_frozen) {
    value.set_requires_grad(!frozen);
  }
  void set_frozen(bool on) {
    frozen = on;
    value.set_requires_grad(!on);
  }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  /// Gradient of the last backward() target w.r.t. this value; empty if none.
  std::span<const double> grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Wengert list for reverse-mode differentiation. One tape per forward pass;
/// nodes are appended in evaluation order and replayed backwards.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  /// With gradients disabled, parameter leaves never require grad (inference).
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Differentiable leaf whose gradient stays on the tape (see Var::grad).
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; backward() accumulates into the parameter's
  /// gradient unless it is frozen.
  Var param(Parameter& p);

  /// Records an op result. `inputs` decide requires_grad; `fn` is only kept
  /// when some input requires a gradient.
  Var record(const char* kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(const char* kind, Tensor value, std::span<const Var> inputs, BackwardFn fn);

  /// Populates gradients of the scalar `loss` w.r.t. every reachable leaf.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const char* kind(std::size_t i) const { return nodes_[i].kind; }

  // Accessors used by op implementations.
  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  std::vector<double>& grad_buffer(std::size_t i);
  std::span<const double> grad(std::size_t i) const { return nodes_[i].grad; }

 private:
  struct Node {
    const char* kind = "";
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Every op checks shapes and throws ShapeError naming the
// op kind and the offending extents. All learning tensors are rank 2.

/// a (n×k) · b (k×m)
Var matmul(Var a, Var b);
/// a (n×k) · bᵀ where b is (m×k)
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
/// Elementwise sum; `b` may also be a 1×cols row broadcast over rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product with the same row-broadcast rule as add.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// s·a + c elementwise.
Var affine(Var a, double s, double c);
/// Row-wise layer normalization with learned 1×cols gain and bias.
Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Row-wise softmax.
Var softmax(Var x);
/// Exact (erf-based) GELU.
Var gelu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
/// Gathers rows of `table` for each id.
Var embedding_lookup(Var table, std::span<const int> ids);
/// Stacks along the sequence (row) axis. Zero-row parts are allowed.
Var concat_seq(std::span<const Var> parts);
/// Stacks along the feature (column) axis.
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
/// Mean over rows -> 1×cols.
Var mean_pool(Var x);
/// Sum of all entries -> 1×1.
Var sum(Var x);
/// Row-wise L2 normalization.
Var l2_normalize(Var x, double eps = 1e-12);
/// Mean over rows of -log softmax(logits)[target]; returns 1×1.
Var cross_entropy(Var logits, std::span<const int> targets);

inline Var concat_seq(std::initializer_list<Var> parts) {
  return concat_seq(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

/// Plain (non-recorded) row-wise softmax, shared by inference paths.
std::vector<double> softmax_values(std::span<const double> logits);

}  // namespace dap
