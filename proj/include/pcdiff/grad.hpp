#pragma once

// Reverse-mode differentiation over dense row-major float64 tensors.
//
// A Tape records every primitive applied to its Vars in creation order, so
// the record list is already topologically sorted and backward() is a single
// reverse sweep. All tensors are rank 2: axis 0 is the point axis, axis 1 the
// feature axis; scalars are 1x1.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "pcdiff/error.hpp"

namespace pcdiff::grad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_[1]; }
  std::size_t size() const { return data_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::string shape_str() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  bool all_finite() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_{0, 0};
  std::vector<double> data_;
};

enum class Op {
  Leaf,
  MatMul,
  Add,
  Mul,
  Scale,
  LeakyRelu,
  Tanh,
  Concat,
  MaxReduce,
  Mean,
  Square,
  Sum,
  Exp,
  Log,
  Transpose,
};

const char* op_name(Op op);

inline constexpr double kLeakySlope = 0.1;

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient accumulator; empty (0x0) when the node does not require grad.
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Accumulates d(output)/d(leaf) into every requires_grad leaf (+=).
  /// Calling twice without zero_grad sums the gradients.
  void backward(Var output);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  Op op(Var v) const { return nodes_.at(v.id).op; }
  std::span<const std::size_t> inputs(Var v) const { return nodes_.at(v.id).inputs; }

 private:
  struct Node {
    Op op = Op::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    double param = 0.0;                // Scale factor
    std::vector<std::size_t> argmax;   // MaxReduce winners per column
  };

  Var record(Op op, std::vector<std::size_t> inputs, Tensor value, double param = 0.0,
             std::vector<std::size_t> argmax = {});
  void backprop(const Node& node);
  Tensor& grad_of(std::size_t id);

  std::deque<Node> nodes_;  // stable references across push_back

  friend Var matmul(Var, Var);
  friend Var add(Var, Var);
  friend Var mul(Var, Var);
  friend Var scale(Var, double);
  friend Var leaky_relu(Var);
  friend Var tanh(Var);
  friend Var concat(std::span<const Var>);
  friend Var max_reduce(Var);
  friend Var mean(Var);
  friend Var square(Var);
  friend Var sum(Var);
  friend Var exp(Var);
  friend Var log(Var);
  friend Var transpose(Var);
  friend struct Recorder;
};

Var matmul(Var a, Var b);
/// Elementwise add; b may be 1xC and is then broadcast over the point axis.
Var add(Var a, Var b);
/// Elementwise multiply with the same broadcast rule as add.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var leaky_relu(Var a);
Var tanh(Var a);
/// Concatenation along the feature axis.
Var concat(std::span<const Var> parts);
inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}
/// Columnwise max over the point axis: NxC -> 1xC. Ties go to the lowest row.
Var max_reduce(Var a);
Var mean(Var a);
Var square(Var a);
Var sum(Var a);
Var exp(Var a);
Var log(Var a);
Var transpose(Var a);

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Builds a scalar from leaves on a fresh tape. Called repeatedly.
using Program = std::function<Var(Tape&, std::span<const Var>)>;

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Compares backward() against central differences for every coordinate of
/// every input: max |g - (f(p+h)-f(p-h))/2h| / max(1, |g|).
FiniteDiffReport finite_diff_check(const Program& program, std::span<const Tensor> inputs,
                                   double h = 1e-5);

}  // namespace pcdiff::grad
