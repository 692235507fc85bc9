#include "pcdiff/grad.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pcdiff::grad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap view(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

MatMap view(Tensor& t) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument("operands belong to different tapes");
  }
  return *a.tape;
}

// Broadcast-compatible: equal shapes, or one side is 1xC against NxC.
enum class Broadcast { None, Left, Right };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (a.cols() == b.cols()) {
    if (b.rows() == 1) return Broadcast::Right;
    if (a.rows() == 1) return Broadcast::Left;
  }
  shape_fail(op, a, b);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : shape_{rows, cols}, data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged row in tensor literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(' << shape_[0] << 'x' << shape_[1] << ')';
  return os.str();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Tanh: return "tanh";
    case Op::Concat: return "concat";
    case Op::MaxReduce: return "max_reduce";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Transpose: return "transpose";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.op = Op::Leaf;
  node.requires_grad = requires_grad;
  if (requires_grad) node.grad = Tensor(value.rows(), value.cols());
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Op op, std::vector<std::size_t> inputs, Tensor value, double param,
                 std::vector<std::size_t> argmax) {
  Node node;
  node.op = op;
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](std::size_t i) { return nodes_[i].requires_grad; });
  node.inputs = std::move(inputs);
  node.param = param;
  node.argmax = std::move(argmax);
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (n.op == Op::Leaf) {
      std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
    } else {
      n.grad = Tensor();
    }
  }
}

void Tape::backward(Var output) {
  if (output.tape != this) throw std::invalid_argument("backward: variable from another tape");
  const Node& out = nodes_.at(output.id);
  if (out.value.size() != 1) {
    throw ShapeError("backward: output must be scalar, got " + out.value.shape_str());
  }
  if (!out.requires_grad) return;

  // Interior gradients are per-sweep scratch; leaves keep accumulating.
  for (std::size_t i = 0; i <= output.id; ++i) {
    if (nodes_[i].op != Op::Leaf) nodes_[i].grad = Tensor();
  }
  grad_of(output.id)[0] += 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.op == Op::Leaf || !n.requires_grad || n.grad.size() == 0) continue;
    backprop(n);
  }
}

void Tape::backprop(const Node& n) {
  const Tensor& g = n.grad;
  auto wants = [this](std::size_t id) { return nodes_[id].requires_grad; };
  if (n.inputs.size() == 1 && !wants(n.inputs[0])) return;

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::MatMul: {
      const std::size_t a = n.inputs[0], b = n.inputs[1];
      if (wants(a)) view(grad_of(a)).noalias() += view(g) * view(nodes_[b].value).transpose();
      if (wants(b)) view(grad_of(b)).noalias() += view(nodes_[a].value).transpose() * view(g);
      break;
    }
    case Op::Add:
    case Op::Mul: {
      const std::size_t a = n.inputs[0], b = n.inputs[1];
      const Tensor& va = nodes_[a].value;
      const Tensor& vb = nodes_[b].value;
      const std::size_t cols = g.cols();
      for (int side = 0; side < 2; ++side) {
        const std::size_t self = side == 0 ? a : b;
        if (!wants(self)) continue;
        const Tensor& other = side == 0 ? vb : va;
        Tensor& dst = grad_of(self);
        const bool reduce = dst.rows() == 1 && g.rows() != 1;
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            double d = g(r, c);
            if (n.op == Op::Mul) d *= other(other.rows() == 1 ? 0 : r, c);
            dst(reduce ? 0 : r, c) += d;
          }
        }
      }
      break;
    }
    case Op::Scale: {
      Tensor& dst = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += n.param * g[i];
      break;
    }
    case Op::LeakyRelu: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      Tensor& dst = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += x[i] > 0.0 ? g[i] : kLeakySlope * g[i];
      break;
    }
    case Op::Tanh: {
      Tensor& dst = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        dst[i] += (1.0 - y * y) * g[i];
      }
      break;
    }
    case Op::Concat: {
      std::size_t offset = 0;
      for (std::size_t in : n.inputs) {
        const std::size_t w = nodes_[in].value.cols();
        if (wants(in)) {
          Tensor& dst = grad_of(in);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < w; ++c) dst(r, c) += g(r, offset + c);
          }
        }
        offset += w;
      }
      break;
    }
    case Op::MaxReduce: {
      Tensor& dst = grad_of(n.inputs[0]);
      for (std::size_t c = 0; c < g.cols(); ++c) dst(n.argmax[c], c) += g(0, c);
      break;
    }
    case Op::Mean: {
      Tensor& dst = grad_of(n.inputs[0]);
      const double share = g[0] / static_cast<double>(dst.size());
      for (double& d : dst.data()) d += share;
      break;
    }
    case Op::Sum: {
      Tensor& dst = grad_of(n.inputs[0]);
      for (double& d : dst.data()) d += g[0];
      break;
    }
    case Op::Square: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      Tensor& dst = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += 2.0 * x[i] * g[i];
      break;
    }
    case Op::Exp: {
      Tensor& dst = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += n.value[i] * g[i];
      break;
    }
    case Op::Log: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      Tensor& dst = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] / x[i];
      break;
    }
    case Op::Transpose: {
      Tensor& dst = grad_of(n.inputs[0]);
      view(dst) += view(g).transpose();
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.cols() != vb.rows()) shape_fail("matmul", va, vb);
  Tensor out(va.rows(), vb.cols());
  view(out).noalias() = view(va) * view(vb);
  return t.record(Op::MatMul, {a.id, b.id}, std::move(out));
}

namespace {

template <typename F>
Tensor broadcast_apply(const char* op, const Tensor& a, const Tensor& b, F f) {
  const Broadcast kind = broadcast_kind(op, a, b);
  const std::size_t rows = kind == Broadcast::Left ? b.rows() : a.rows();
  const std::size_t cols = a.cols();
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t ra = kind == Broadcast::Left ? 0 : r;
    const std::size_t rb = kind == Broadcast::Right ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = f(a(ra, c), b(rb, c));
  }
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor out = broadcast_apply("add", t.value(a), t.value(b),
                               [](double x, double y) { return x + y; });
  return t.record(Op::Add, {a.id, b.id}, std::move(out));
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor out = broadcast_apply("mul", t.value(a), t.value(b),
                               [](double x, double y) { return x * y; });
  return t.record(Op::Mul, {a.id, b.id}, std::move(out));
}

struct Recorder {
  static Var record(Tape& t, Op op, std::size_t input, Tensor value, double param) {
    return t.record(op, {input}, std::move(value), param);
  }
};

namespace {

template <typename F>
Var unary(Var a, Op op, F f, double param = 0.0) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (double& v : out.data()) v = f(v);
  return Recorder::record(t, op, a.id, std::move(out), param);
}

}  // namespace

Var scale(Var a, double factor) {
  return unary(a, Op::Scale, [factor](double v) { return factor * v; }, factor);
}

Var leaky_relu(Var a) {
  return unary(a, Op::LeakyRelu, [](double v) { return v > 0.0 ? v : kLeakySlope * v; });
}

Var tanh(Var a) {
  return unary(a, Op::Tanh, [](double v) { return std::tanh(v); });
}

Var square(Var a) {
  return unary(a, Op::Square, [](double v) { return v * v; });
}

Var exp(Var a) {
  return unary(a, Op::Exp, [](double v) { return std::exp(v); });
}

Var log(Var a) {
  return unary(a, Op::Log, [](double v) { return std::log(v); });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape& t = *parts[0].tape;
  const Tensor& first = t.value(parts[0]);
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    tape_of(parts[0], p);
    const Tensor& v = t.value(p);
    if (v.rows() != first.rows()) shape_fail("concat", first, v);
    cols += v.cols();
    ids.push_back(p.id);
  }
  Tensor out(first.rows(), cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = t.value(p);
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, offset + c) = v(r, c);
    }
    offset += v.cols();
  }
  return t.record(Op::Concat, std::move(ids), std::move(out));
}

Var max_reduce(Var a) {
  Tape& t = *a.tape;
  const Tensor& v = t.value(a);
  if (v.rows() == 0) throw ShapeError("max_reduce: empty point axis " + v.shape_str());
  Tensor out(1, v.cols());
  std::vector<std::size_t> arg(v.cols(), 0);
  for (std::size_t c = 0; c < v.cols(); ++c) {
    double best = v(0, c);
    for (std::size_t r = 1; r < v.rows(); ++r) {
      if (v(r, c) > best) {
        best = v(r, c);
        arg[c] = r;
      }
    }
    out(0, c) = best;
  }
  return t.record(Op::MaxReduce, {a.id}, std::move(out), 0.0, std::move(arg));
}

Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : t.value(a).data()) s += v;
  return t.record(Op::Sum, {a.id}, Tensor::scalar(s));
}

Var mean(Var a) {
  Tape& t = *a.tape;
  const Tensor& v = t.value(a);
  if (v.size() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double x : v.data()) s += x;
  return t.record(Op::Mean, {a.id}, Tensor::scalar(s / static_cast<double>(v.size())));
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& v = t.value(a);
  Tensor out(v.cols(), v.rows());
  view(out) = view(v).transpose();
  return t.record(Op::Transpose, {a.id}, std::move(out));
}

// ---------------------------------------------------------------------------
// Finite differences

FiniteDiffReport finite_diff_check(const Program& program, std::span<const Tensor> inputs,
                                   double h) {
  if (!(h > 0.0 && h <= 1e-2)) throw std::invalid_argument("finite_diff_check: h must be in (0, 1e-2]");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& in : inputs) {
      if (!in.all_finite()) throw NumericalError("finite_diff_check: non-finite input");
      leaves.push_back(tape.leaf(in, true));
    }
    Var out = program(tape, leaves);
    if (!std::isfinite(tape.value(out).item())) {
      throw NumericalError("finite_diff_check: non-finite output at the unperturbed point");
    }
    tape.backward(out);
    for (Var l : leaves) analytic.push_back(tape.grad(l));
  }

  auto evaluate = [&](std::span<const Tensor> point) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& in : point) leaves.push_back(tape.constant(in));
    return tape.value(program(tape, leaves)).item();
  };

  FiniteDiffReport report;
  std::vector<Tensor> point(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < point.size(); ++k) {
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      const double saved = point[k][i];
      point[k][i] = saved + h;
      const double up = evaluate(point);
      point[k][i] = saved - h;
      const double down = evaluate(point);
      point[k][i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericalError("finite_diff_check: non-finite value perturbing input " +
                             std::to_string(k) + " coordinate " + std::to_string(i));
      }
      const double numeric = (up - down) / (2.0 * h);
      const double g = analytic[k][i];
      const double err = std::abs(g - numeric) / std::max(1.0, std::abs(g));
      if (err > report.max_rel_error || report.coordinates == 0) {
        report.max_rel_error = err;
        report.worst_input = k;
        report.worst_index = i;
      }
      ++report.coordinates;
    }
  }
  return report;
}

}  // namespace pcdiff::grad
