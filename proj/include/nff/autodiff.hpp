#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "nff/errors.hpp"

namespace nff::ad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// Dense row-major matrix of doubles. Vectors are stored as n x 1 columns,
/// scalars as 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::vector<double> values);
  static Tensor row(std::vector<double> values);
  static Tensor identity(std::size_t n);
  static Tensor from(const RowMatrix& m);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::array<std::size_t, 2> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  MatrixMap mat() { return MatrixMap(data_.data(), rows_, cols_); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data_.data(), rows_, cols_); }

  bool all_finite() const;
  void fill(double v);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Tensor& t);

enum class Op : std::uint8_t {
  Constant,
  Parameter,
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  Exp,
  Log,
  Relu,
  Tanh,
  Softplus,
  Sum,
  Mean,
  RowSum,
  ConcatCols,
  ConcatRows,
  SliceCols,
  SliceRows,
  Diag,
  Transpose,
  Reshape,
  Inverse,
  LogDet,
};

const char* op_name(Op op);

class Graph;

/// Handle to a node in a Graph. Cheap to copy; only valid while its graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  double item() const { return value().item(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Gradients of a scalar output with respect to trainable leaves, keyed by the
/// address of the parameter tensor that was registered with Graph::parameter.
class Gradients {
 public:
  void set(const Tensor* param, Tensor grad) { grads_[param] = std::move(grad); }
  bool contains(const Tensor& param) const { return grads_.contains(&param); }
  /// Gradient for `param`; zeros if the parameter did not influence the output.
  Tensor of(const Tensor& param) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Tensor*, Tensor> grads_;
};

/// Record-and-replay tape. Nodes are appended in evaluation order, so the
/// node list is always a valid topological order.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var constant(double v) { return constant(Tensor::scalar(v)); }
  /// Registers a trainable leaf. Registering the same tensor twice returns the
  /// same node, so a network applied several times accumulates one gradient.
  Var parameter(const Tensor& param);

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[check(v)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar node. Each node is visited once.
  void backward(Var output);
  Gradients parameter_gradients() const;

  // Primitive constructors; the free functions below are the usual entry point.
  Var unary(Op op, Var a, double scalar = 0.0);
  Var binary(Op op, Var a, Var b);
  Var matmul(Var a, Var b);
  Var concat(Op op, std::span<const Var> parts);
  Var slice(Op op, Var a, std::size_t begin, std::size_t count);
  Var reshape(Var a, std::size_t rows, std::size_t cols);

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    Tensor aux;
    double scalar = 0.0;
    std::size_t i0 = 0;
    const Tensor* param = nullptr;
    bool needs_grad = false;
  };

  int check(Var v) const;
  Var push(Node node);
  void accumulate(int id, const Tensor& g);
  void backward_node(const Node& n);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> param_ids_;
};

struct ValueAndGrad {
  double value = 0.0;
  Gradients gradients;
};

/// Runs the reverse sweep from `output` (a 1x1 node) and collects the
/// gradient of every registered parameter.
ValueAndGrad value_and_grad(Graph& graph, Var output);

Var matmul(Var a, Var b);
// Element-wise ops. The second operand may broadcast along a unit dimension
// (scalar, row vector or column vector); the first may as well.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var exp(Var a);
Var log(Var a);
Var relu(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::span<const Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
/// n x 1 column -> n x n diagonal matrix.
Var diag(Var a);
Var transpose(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// LU with partial pivoting; adjoint dA = -A^-T G A^-T.
Var inverse(Var a);
/// log|det A|; adjoint G * A^-T.
Var logdet(Var a);
Var square(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace nff::ad
