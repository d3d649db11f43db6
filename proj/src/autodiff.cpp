#include "nff/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/LU>

namespace nff::ad {

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

Tensor Tensor::column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(n, 1, std::move(values));
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::from(const RowMatrix& m) {
  Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  t.mat() = m;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(*this));
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string shape_string(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

Tensor Gradients::of(const Tensor& param) const {
  auto it = grads_.find(&param);
  if (it == grads_.end()) return Tensor(param.rows(), param.cols());
  return it->second;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Parameter: return "parameter";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Softplus: return "softplus";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::RowSum: return "row_sum";
    case Op::ConcatCols: return "concat_cols";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::Diag: return "diag";
    case Op::Transpose: return "transpose";
    case Op::Reshape: return "reshape";
    case Op::Inverse: return "inverse";
    case Op::LogDet: return "logdet";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph_->value(*this); }

// ---------------------------------------------------------------------------
// Broadcasting helpers

namespace {

struct Broadcast {
  std::size_t rows = 0, cols = 0;
  std::size_t a_rs = 0, a_cs = 0, b_rs = 0, b_cs = 0;
};

Broadcast broadcast_shape(const Tensor& a, const Tensor& b, Op op) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_string(a) +
                     " and " + shape_string(b));
  };
  Broadcast bc;
  bc.rows = dim(a.rows(), b.rows());
  bc.cols = dim(a.cols(), b.cols());
  bc.a_rs = a.rows() == 1 ? 0 : a.cols();
  bc.a_cs = a.cols() == 1 ? 0 : 1;
  bc.b_rs = b.rows() == 1 ? 0 : b.cols();
  bc.b_cs = b.cols() == 1 ? 0 : 1;
  return bc;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

void require_square(const Tensor& a, Op op) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw ShapeError(std::string(op_name(op)) + ": expected non-empty square matrix, got " +
                     shape_string(a));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

int Graph::check(Var v) const {
  if (v.valid() && &v.graph() != this) throw std::logic_error("variable belongs to another graph");
  if (v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
    throw std::logic_error("invalid variable id");
  }
  return v.id();
}

Var Graph::push(Node node) {
  if (!node.value.all_finite()) {
    throw NumericalError(std::string("non-finite value produced by ") + op_name(node.op));
  }
  for (int in : node.inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::parameter(const Tensor& param) {
  if (auto it = param_ids_.find(&param); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.op = Op::Parameter;
  n.value = param;
  n.param = &param;
  n.needs_grad = true;
  Var v = push(std::move(n));
  param_ids_[&param] = v.id();
  return v;
}

const Tensor& Graph::grad(Var v) const { return nodes_[check(v)].grad; }

Var Graph::unary(Op op, Var av, double scalar) {
  const Tensor& a = nodes_[check(av)].value;
  Node n;
  n.op = op;
  n.inputs = {av.id()};
  n.scalar = scalar;
  switch (op) {
    case Op::Scale:
    case Op::AddScalar:
    case Op::Exp:
    case Op::Log:
    case Op::Relu:
    case Op::Tanh:
    case Op::Softplus: {
      n.value = Tensor(a.rows(), a.cols());
      auto out = n.value.data();
      auto in = a.data();
      for (std::size_t i = 0; i < in.size(); ++i) {
        const double x = in[i];
        switch (op) {
          case Op::Scale: out[i] = scalar * x; break;
          case Op::AddScalar: out[i] = x + scalar; break;
          case Op::Exp: out[i] = std::exp(x); break;
          case Op::Log: out[i] = std::log(x); break;
          case Op::Relu: out[i] = x > 0 ? x : 0.0; break;
          case Op::Tanh: out[i] = std::tanh(x); break;
          case Op::Softplus: out[i] = softplus_value(x); break;
          default: break;
        }
      }
      break;
    }
    case Op::Sum:
    case Op::Mean: {
      double s = 0.0;
      for (double x : a.data()) s += x;
      if (op == Op::Mean) {
        if (a.size() == 0) throw ShapeError("mean of empty tensor");
        s /= static_cast<double>(a.size());
      }
      n.value = Tensor::scalar(s);
      break;
    }
    case Op::RowSum: {
      n.value = Tensor(a.rows(), 1);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) s += a(r, c);
        n.value(r, 0) = s;
      }
      break;
    }
    case Op::Diag: {
      if (a.cols() != 1 && a.rows() != 1) {
        throw ShapeError("diag: expected a vector, got " + shape_string(a));
      }
      const std::size_t k = a.size();
      n.value = Tensor(k, k);
      for (std::size_t i = 0; i < k; ++i) n.value(i, i) = a[i];
      break;
    }
    case Op::Transpose: {
      n.value = Tensor(a.cols(), a.rows());
      n.value.mat() = a.mat().transpose();
      break;
    }
    case Op::Inverse: {
      require_square(a, op);
      Eigen::PartialPivLU<RowMatrix> lu(a.mat());
      n.value = Tensor(a.rows(), a.cols());
      n.value.mat() = lu.inverse();
      break;
    }
    case Op::LogDet: {
      require_square(a, op);
      Eigen::PartialPivLU<RowMatrix> lu(a.mat());
      const auto& packed = lu.matrixLU();
      double s = 0.0;
      for (Eigen::Index i = 0; i < packed.rows(); ++i) s += std::log(std::abs(packed(i, i)));
      n.value = Tensor::scalar(s);
      n.aux = Tensor(a.rows(), a.cols());
      n.aux.mat() = lu.inverse().transpose();
      break;
    }
    default:
      throw std::logic_error(std::string("unary: unsupported op ") + op_name(op));
  }
  return push(std::move(n));
}

Var Graph::binary(Op op, Var av, Var bv) {
  const Tensor& a = nodes_[check(av)].value;
  const Tensor& b = nodes_[check(bv)].value;
  const Broadcast bc = broadcast_shape(a, b, op);
  Node n;
  n.op = op;
  n.inputs = {av.id(), bv.id()};
  n.value = Tensor(bc.rows, bc.cols);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* out = n.value.data().data();
  for (std::size_t r = 0; r < bc.rows; ++r) {
    for (std::size_t c = 0; c < bc.cols; ++c) {
      const double x = pa[r * bc.a_rs + c * bc.a_cs];
      const double y = pb[r * bc.b_rs + c * bc.b_cs];
      double v = 0.0;
      switch (op) {
        case Op::Add: v = x + y; break;
        case Op::Sub: v = x - y; break;
        case Op::Mul: v = x * y; break;
        case Op::Div: v = x / y; break;
        default: throw std::logic_error(std::string("binary: unsupported op ") + op_name(op));
      }
      out[r * bc.cols + c] = v;
    }
  }
  return push(std::move(n));
}

Var Graph::matmul(Var av, Var bv) {
  const Tensor& a = nodes_[check(av)].value;
  const Tensor& b = nodes_[check(bv)].value;
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a) + " * " + shape_string(b));
  }
  Node n;
  n.op = Op::MatMul;
  n.inputs = {av.id(), bv.id()};
  n.value = Tensor(a.rows(), b.cols());
  n.value.mat().noalias() = a.mat() * b.mat();
  return push(std::move(n));
}

Var Graph::concat(Op op, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError(std::string(op_name(op)) + ": no inputs");
  const bool cols = op == Op::ConcatCols;
  std::size_t fixed = nodes_[check(parts[0])].value.shape()[cols ? 0 : 1];
  std::size_t total = 0;
  Node n;
  n.op = op;
  for (Var p : parts) {
    const Tensor& t = nodes_[check(p)].value;
    if ((cols ? t.rows() : t.cols()) != fixed) {
      throw ShapeError(std::string(op_name(op)) + ": mismatched shape " + shape_string(t));
    }
    total += cols ? t.cols() : t.rows();
    n.inputs.push_back(p.id());
  }
  n.value = cols ? Tensor(fixed, total) : Tensor(total, fixed);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& t = nodes_[p.id()].value;
    if (cols) {
      n.value.mat().block(0, offset, t.rows(), t.cols()) = t.mat();
      offset += t.cols();
    } else {
      n.value.mat().block(offset, 0, t.rows(), t.cols()) = t.mat();
      offset += t.rows();
    }
  }
  return push(std::move(n));
}

Var Graph::slice(Op op, Var av, std::size_t begin, std::size_t count) {
  const Tensor& a = nodes_[check(av)].value;
  const bool cols = op == Op::SliceCols;
  const std::size_t extent = cols ? a.cols() : a.rows();
  if (begin + count > extent) {
    throw ShapeError(std::string(op_name(op)) + ": range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_string(a));
  }
  Node n;
  n.op = op;
  n.inputs = {av.id()};
  n.i0 = begin;
  if (cols) {
    n.value = Tensor(a.rows(), count);
    n.value.mat() = a.mat().block(0, begin, a.rows(), count);
  } else {
    n.value = Tensor(count, a.cols());
    n.value.mat() = a.mat().block(begin, 0, count, a.cols());
  }
  return push(std::move(n));
}

Var Graph::reshape(Var av, std::size_t rows, std::size_t cols) {
  const Tensor& a = nodes_[check(av)].value;
  if (rows * cols != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a) + " as " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  }
  Node n;
  n.op = Op::Reshape;
  n.inputs = {av.id()};
  n.value = Tensor(rows, cols, a.storage());
  return push(std::move(n));
}

void Graph::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.empty() && n.value.size() > 0) {
    n.grad = g;
    return;
  }
  n.grad.mat() += g.mat();
}

void Graph::backward(Var output) {
  const int out = check(output);
  if (nodes_[out].value.size() != 1) {
    throw ShapeError("backward: output must be a scalar, got " + shape_string(nodes_[out].value));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[out].needs_grad) return;
  nodes_[out].grad = Tensor::scalar(1.0);
  for (int i = out; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty() || n.inputs.empty()) continue;
    backward_node(n);
    if (!nodes_[i].grad.all_finite()) {
      throw NumericalError(std::string("non-finite gradient at ") + op_name(n.op));
    }
  }
}

void Graph::backward_node(const Node& n) {
  const Tensor& g = n.grad;
  auto input = [&](std::size_t k) -> const Node& { return nodes_[n.inputs[k]]; };
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };

  switch (n.op) {
    case Op::Constant:
    case Op::Parameter:
      return;
    case Op::MatMul: {
      const Tensor& a = input(0).value;
      const Tensor& b = input(1).value;
      if (wants(0)) {
        Tensor ga(a.rows(), a.cols());
        ga.mat().noalias() = g.mat() * b.mat().transpose();
        accumulate(n.inputs[0], ga);
      }
      if (wants(1)) {
        Tensor gb(b.rows(), b.cols());
        gb.mat().noalias() = a.mat().transpose() * g.mat();
        accumulate(n.inputs[1], gb);
      }
      return;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const Tensor& a = input(0).value;
      const Tensor& b = input(1).value;
      const Broadcast bc = broadcast_shape(a, b, n.op);
      Tensor ga = wants(0) ? Tensor(a.rows(), a.cols()) : Tensor();
      Tensor gb = wants(1) ? Tensor(b.rows(), b.cols()) : Tensor();
      for (std::size_t r = 0; r < bc.rows; ++r) {
        for (std::size_t c = 0; c < bc.cols; ++c) {
          const std::size_t ia = r * bc.a_rs + c * bc.a_cs;
          const std::size_t ib = r * bc.b_rs + c * bc.b_cs;
          const double gv = g[r * bc.cols + c];
          const double x = a[ia];
          const double y = b[ib];
          double da = 0.0, db = 0.0;
          switch (n.op) {
            case Op::Add: da = gv; db = gv; break;
            case Op::Sub: da = gv; db = -gv; break;
            case Op::Mul: da = gv * y; db = gv * x; break;
            case Op::Div: da = gv / y; db = -gv * x / (y * y); break;
            default: break;
          }
          if (!ga.empty()) ga[ia] += da;
          if (!gb.empty()) gb[ib] += db;
        }
      }
      if (!ga.empty()) accumulate(n.inputs[0], ga);
      if (!gb.empty()) accumulate(n.inputs[1], gb);
      return;
    }
    default:
      break;
  }

  // Remaining ops are single-input.
  if (!wants(0)) {
    if (n.op != Op::ConcatCols && n.op != Op::ConcatRows) return;
  }
  const Tensor& a = input(0).value;
  switch (n.op) {
    case Op::Scale:
    case Op::AddScalar:
    case Op::Exp:
    case Op::Log:
    case Op::Relu:
    case Op::Tanh:
    case Op::Softplus: {
      Tensor ga(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        const double y = n.value[i];
        double d = 0.0;
        switch (n.op) {
          case Op::Scale: d = n.scalar; break;
          case Op::AddScalar: d = 1.0; break;
          case Op::Exp: d = y; break;
          case Op::Log: d = 1.0 / x; break;
          case Op::Relu: d = x > 0 ? 1.0 : 0.0; break;
          case Op::Tanh: d = 1.0 - y * y; break;
          case Op::Softplus: d = sigmoid(x); break;
          default: break;
        }
        ga[i] = g[i] * d;
      }
      accumulate(n.inputs[0], ga);
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      double gv = g.item();
      if (n.op == Op::Mean) gv /= static_cast<double>(a.size());
      accumulate(n.inputs[0], Tensor(a.rows(), a.cols(), gv));
      return;
    }
    case Op::RowSum: {
      Tensor ga(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) ga(r, c) = g(r, 0);
      accumulate(n.inputs[0], ga);
      return;
    }
    case Op::ConcatCols:
    case Op::ConcatRows: {
      const bool cols = n.op == Op::ConcatCols;
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& t = input(k).value;
        if (wants(k)) {
          Tensor gk(t.rows(), t.cols());
          if (cols) {
            gk.mat() = g.mat().block(0, offset, t.rows(), t.cols());
          } else {
            gk.mat() = g.mat().block(offset, 0, t.rows(), t.cols());
          }
          accumulate(n.inputs[k], gk);
        }
        offset += cols ? t.cols() : t.rows();
      }
      return;
    }
    case Op::SliceCols:
    case Op::SliceRows: {
      Tensor ga(a.rows(), a.cols());
      if (n.op == Op::SliceCols) {
        ga.mat().block(0, n.i0, g.rows(), g.cols()) = g.mat();
      } else {
        ga.mat().block(n.i0, 0, g.rows(), g.cols()) = g.mat();
      }
      accumulate(n.inputs[0], ga);
      return;
    }
    case Op::Diag: {
      Tensor ga(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] = g(i, i);
      accumulate(n.inputs[0], ga);
      return;
    }
    case Op::Transpose: {
      Tensor ga(a.rows(), a.cols());
      ga.mat() = g.mat().transpose();
      accumulate(n.inputs[0], ga);
      return;
    }
    case Op::Reshape: {
      accumulate(n.inputs[0], Tensor(a.rows(), a.cols(), g.storage()));
      return;
    }
    case Op::Inverse: {
      const Tensor& inv = n.value;
      Tensor ga(a.rows(), a.cols());
      ga.mat().noalias() = -(inv.mat().transpose() * g.mat() * inv.mat().transpose());
      accumulate(n.inputs[0], ga);
      return;
    }
    case Op::LogDet: {
      Tensor ga(a.rows(), a.cols());
      ga.mat() = g.item() * n.aux.mat();
      accumulate(n.inputs[0], ga);
      return;
    }
    default:
      throw std::logic_error(std::string("backward: unhandled op ") + op_name(n.op));
  }
}

Gradients Graph::parameter_gradients() const {
  Gradients out;
  for (const Node& n : nodes_) {
    if (n.op != Op::Parameter) continue;
    out.set(n.param, n.grad.empty() ? Tensor(n.value.rows(), n.value.cols()) : n.grad);
  }
  return out;
}

ValueAndGrad value_and_grad(Graph& graph, Var output) {
  graph.backward(output);
  return {output.item(), graph.parameter_gradients()};
}

// ---------------------------------------------------------------------------
// Free functions

Var matmul(Var a, Var b) { return a.graph().matmul(a, b); }
Var add(Var a, Var b) { return a.graph().binary(Op::Add, a, b); }
Var sub(Var a, Var b) { return a.graph().binary(Op::Sub, a, b); }
Var mul(Var a, Var b) { return a.graph().binary(Op::Mul, a, b); }
Var div(Var a, Var b) { return a.graph().binary(Op::Div, a, b); }
Var scale(Var a, double s) { return a.graph().unary(Op::Scale, a, s); }
Var add_scalar(Var a, double s) { return a.graph().unary(Op::AddScalar, a, s); }
Var exp(Var a) { return a.graph().unary(Op::Exp, a); }
Var log(Var a) { return a.graph().unary(Op::Log, a); }
Var relu(Var a) { return a.graph().unary(Op::Relu, a); }
Var tanh(Var a) { return a.graph().unary(Op::Tanh, a); }
Var softplus(Var a) { return a.graph().unary(Op::Softplus, a); }
Var sum(Var a) { return a.graph().unary(Op::Sum, a); }
Var mean(Var a) { return a.graph().unary(Op::Mean, a); }
Var row_sum(Var a) { return a.graph().unary(Op::RowSum, a); }
Var concat_cols(std::span<const Var> parts) { return parts[0].graph().concat(Op::ConcatCols, parts); }
Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}
Var concat_rows(std::span<const Var> parts) { return parts[0].graph().concat(Op::ConcatRows, parts); }
Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}
Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  return a.graph().slice(Op::SliceCols, a, begin, count);
}
Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  return a.graph().slice(Op::SliceRows, a, begin, count);
}
Var diag(Var a) { return a.graph().unary(Op::Diag, a); }
Var transpose(Var a) { return a.graph().unary(Op::Transpose, a); }
Var reshape(Var a, std::size_t rows, std::size_t cols) { return a.graph().reshape(a, rows, cols); }
Var inverse(Var a) { return a.graph().unary(Op::Inverse, a); }
Var logdet(Var a) { return a.graph().unary(Op::LogDet, a); }
Var square(Var a) { return mul(a, a); }

}  // namespace nff::ad
