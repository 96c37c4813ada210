#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every primitive applied during a forward pass. Var is a
// lightweight handle to a recorded value. Trainable weights live outside the
// tape as Parameter objects; Tape::leaf() registers one for the current pass
// and backward() accumulates into Parameter::grad.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tide/sparse.hpp"

namespace tide::ad {

using tide::Matrix;

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value)
      : name(std::move(name)), value(std::move(value)),
        grad(Matrix::Zero(this->value.rows(), this->value.cols())) {}

  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Convenience for 1x1 results.
  double item() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the adjoint of the node's output and pushes contributions to its
  // inputs through Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Differentiable leaf owned by the tape; read its gradient with grad().
  Var variable(Matrix value);
  // Differentiable leaf whose gradient is added to param.grad on backward().
  // The parameter must outlive the tape's backward pass.
  Var leaf(Parameter& param);

  // Records a primitive. Inputs must already be on this tape; the output is
  // checked for NaN/Inf and rejected with a NumericError naming `op`.
  Var record(std::string_view op, Matrix value, std::vector<Var> inputs, BackwardFn backward);

  // Reverse sweep from a 1x1 loss. Adjoints are recomputed from zero on every
  // call, so several losses may be differentiated on one tape in sequence.
  void backward(Var loss);

  // Adjoint of a node from the most recent backward() (zero if unreached).
  Matrix grad(Var v) const;

  void accumulate(Var v, const Matrix& contribution);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    std::string_view op;
    Matrix value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  // deque keeps node addresses stable so Var::value() references stay valid.
  std::deque<Node> nodes_;
  std::vector<Matrix> adjoints_;
  std::vector<bool> touched_;
};

// --- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
// Constant sparse operator times a dense variable.
Var spmm(const SparseMatrix& s, Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a (n x c) plus a 1 x c row broadcast to every row.
Var add_row(Var a, Var row);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var neg(Var a);
Var square(Var a);

Var exp(Var a);
Var log(Var a);
Var relu(Var a);
Var softplus(Var a);
// max(softplus(a), floor): the positive scale map used for sigma heads.
Var positive_scale(Var a, double floor);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
// n x 1 column of stabilized row-wise log-sum-exp.
Var logsumexp_rows(Var a);

// 1 x 1 reductions.
Var sum(Var a);
Var mean(Var a);

// mu + sigma .* noise, noise held constant.
Var reparameterize(Var mu, Var sigma, const Matrix& noise);
// sum((a - target)^2) / (rows * cols), target held constant.
Var squared_error_mean(Var a, const Matrix& target);

Var concat_cols(Var a, Var b);
// Rows of `a` at the given indices, in order.
Var gather_rows(Var a, std::span<const std::size_t> rows);
// n x 1 column of a(i, index[i]).
Var pick(Var a, std::span<const int> index);
// n x 1 column of a(i, i) for square a.
Var diagonal(Var a);
// Value copy with no gradient path.
Var detach(Var a);

// Operator sugar for the elementwise basics.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double k, Var a) { return scale(a, k); }

}  // namespace tide::ad
