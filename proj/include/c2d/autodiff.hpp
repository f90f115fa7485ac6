#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "c2d/tensor.hpp"

namespace c2d::num {

/// A trainable tensor. Graph leaves created from it accumulate into grad.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad = Tensor(value.rows(), value.cols()); }
};

enum class OpKind {
  Constant,
  Input,
  Param,
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  Relu,
  Exp,
  Log,
  Sqrt,
  Square,
  Softmax,
  LogSoftmax,
  LogSumExp,
  L2Normalize,
  ConcatRows,
  SliceRows,
  Transpose,
  Sum,
  Mean,
  SumRows,
  MeanCols,
  Clamp,
  Pick,
};

const char* op_name(OpKind op);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// which is a topological order, so backward is a single reverse sweep.
class Graph {
 public:
  struct Node {
    OpKind op = OpKind::Constant;
    std::array<std::size_t, 2> in{};
    int arity = 0;
    bool requires_grad = false;
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    double a = 0.0;
    double b = 0.0;
    std::vector<std::size_t> index;
    std::vector<double> aux;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  /// Leaf whose gradient is kept on the node (read back with Var::grad).
  Var input(Tensor t);
  Var param(Parameter& p);

  /// Root must hold a single value. Gradients of Param leaves are added to
  /// Parameter::grad; call zero_grad on parameters between steps.
  void backward(Var root);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Node construction used by the free op functions below.
  Var push(Node n);
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad_of(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  void accumulate(std::size_t id, const Tensor& g);
  void backprop_node(std::size_t id);

  std::vector<Node> nodes_;
};

// Binary element-wise ops accept b with the same shape as a, 1xC (row
// broadcast), Rx1 (column broadcast) or 1x1.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var exp(Var a);
/// log(max(a, floor)); the gradient is zero where the floor is active.
Var log(Var a, double floor = 0.0);
Var sqrt(Var a);
Var square(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Rx1 result.
Var logsumexp_rows(Var a);
Var l2_normalize_rows(Var a);
Var concat_rows(Var a, Var b);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var transpose(Var a);
Var sum(Var a);
Var mean(Var a);
/// Rx1 row sums.
Var sum_rows(Var a);
/// 1xC column means.
Var mean_cols(Var a);
Var clamp(Var a, double lo, double hi);
/// Rx1 result holding a(i, idx[i]).
Var pick(Var a, std::span<const std::size_t> idx);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace c2d::num
