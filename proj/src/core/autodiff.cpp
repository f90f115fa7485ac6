#include "c2d/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "c2d/error.hpp"

namespace c2d::num {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Constant: return "constant";
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Square: return "square";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::L2Normalize: return "l2_normalize";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::Transpose: return "transpose";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SumRows: return "sum_rows";
    case OpKind::MeanCols: return "mean_cols";
    case OpKind::Clamp: return "clamp";
    case OpKind::Pick: return "pick";
  }
  return "?";
}

const Tensor& Var::value() const { return graph->value_of(id); }
const Tensor& Var::grad() const { return graph->grad_of(id); }

Var Graph::push(Node n) {
  if (!n.value.all_finite()) {
    throw NumericalError(std::string("non-finite value produced by ") + op_name(n.op) + " " +
                         n.value.shape_str());
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor t) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(t);
  return push(std::move(n));
}

Var Graph::input(Tensor t) {
  Node n;
  n.op = OpKind::Input;
  n.requires_grad = true;
  n.value = std::move(t);
  return push(std::move(n));
}

Var Graph::param(Parameter& p) {
  Node n;
  n.op = OpKind::Param;
  n.requires_grad = true;
  n.param = &p;
  n.value = p.value;
  return push(std::move(n));
}

const Tensor& Graph::grad_of(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Graph::backward(Var root) {
  if (root.graph != this) throw ConfigError("backward: variable belongs to another graph");
  if (nodes_.at(root.id).value.size() != 1) {
    throw ConfigError("backward: root must be scalar, got " + nodes_[root.id].value.shape_str());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[root.id].grad = Tensor::scalar(1.0);
  for (std::size_t id = root.id + 1; id-- > 0;) {
    if (!nodes_[id].requires_grad || nodes_[id].grad.empty()) continue;
    backprop_node(id);
  }
}

namespace {

enum class Bcast { Same, Row, Col, Scalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, OpKind op) {
  if (a.same_shape(b)) return Bcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  throw ConfigError(std::string(op_name(op)) + ": shape mismatch " + a.shape_str() + " vs " +
                    b.shape_str());
}

inline double bval(const Tensor& b, Bcast k, std::size_t i, std::size_t j) {
  switch (k) {
    case Bcast::Same: return b(i, j);
    case Bcast::Row: return b(0, j);
    case Bcast::Col: return b(i, 0);
    case Bcast::Scalar: return b(0, 0);
  }
  return 0.0;
}

// Sums a full-shape gradient down to the broadcast operand's shape.
Tensor reduce_to(const Tensor& g, const Tensor& b, Bcast k) {
  if (k == Bcast::Same) return g;
  Tensor out(b.rows(), b.cols());
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) {
      switch (k) {
        case Bcast::Row: out(0, j) += g(i, j); break;
        case Bcast::Col: out(i, 0) += g(i, j); break;
        case Bcast::Scalar: out(0, 0) += g(i, j); break;
        case Bcast::Same: break;
      }
    }
  return out;
}

template <typename Fn>
Tensor binary_map(const Tensor& a, const Tensor& b, Bcast k, Fn fn) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = fn(a(i, j), bval(b, k, i, j));
  return out;
}

template <typename Fn>
Tensor unary_map(const Tensor& a, Fn fn) {
  Tensor out = a;
  for (double& v : out.data()) v = fn(v);
  return out;
}

Graph& same_graph(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw ConfigError("operands belong to different graphs");
  }
  return *a.graph;
}

Graph::Node make_node(OpKind op, Graph& g, std::initializer_list<Var> inputs) {
  Graph::Node n;
  n.op = op;
  for (Var v : inputs) {
    n.in[static_cast<std::size_t>(n.arity++)] = v.id;
    n.requires_grad = n.requires_grad || g.requires_grad(v.id);
  }
  return n;
}

Var binary(OpKind op, Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast k = broadcast_kind(av, bv, op);
  auto n = make_node(op, g, {a, b});
  switch (op) {
    case OpKind::Add: n.value = binary_map(av, bv, k, [](double x, double y) { return x + y; }); break;
    case OpKind::Sub: n.value = binary_map(av, bv, k, [](double x, double y) { return x - y; }); break;
    case OpKind::Mul: n.value = binary_map(av, bv, k, [](double x, double y) { return x * y; }); break;
    case OpKind::Div: n.value = binary_map(av, bv, k, [](double x, double y) { return x / y; }); break;
    default: throw ConfigError("binary: unsupported op");
  }
  return g.push(std::move(n));
}

Var unary(OpKind op, Var a, Tensor value, double pa = 0.0, double pb = 0.0) {
  Graph& g = *a.graph;
  auto n = make_node(op, g, {a});
  n.value = std::move(value);
  n.a = pa;
  n.b = pb;
  return g.push(std::move(n));
}

}  // namespace

void Graph::backprop_node(std::size_t id) {
  // accumulate() writes into input nodes only; nodes_ is never resized here.
  const Node& n = nodes_[id];
  const Tensor& g = n.grad;
  auto in_value = [&](int k) -> const Tensor& { return nodes_[n.in[static_cast<std::size_t>(k)]].value; };
  auto wants = [&](int k) { return nodes_[n.in[static_cast<std::size_t>(k)]].requires_grad; };
  auto give = [&](int k, const Tensor& t) { accumulate(n.in[static_cast<std::size_t>(k)], t); };

  switch (n.op) {
    case OpKind::Constant:
    case OpKind::Input:
      break;
    case OpKind::Param: {
      if (n.param->grad.empty()) n.param->grad = Tensor(n.value.rows(), n.value.cols());
      auto dst = n.param->grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.data()[i];
      break;
    }
    case OpKind::MatMul:
      if (wants(0)) give(0, matmul_nt(g, in_value(1)));
      if (wants(1)) give(1, matmul_tn(in_value(0), g));
      break;
    case OpKind::Add:
    case OpKind::Sub: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const Bcast k = broadcast_kind(a, b, n.op);
      if (wants(0)) give(0, g);
      if (wants(1)) {
        Tensor gb = reduce_to(g, b, k);
        if (n.op == OpKind::Sub)
          for (double& v : gb.data()) v = -v;
        give(1, gb);
      }
      break;
    }
    case OpKind::Mul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const Bcast k = broadcast_kind(a, b, n.op);
      if (wants(0)) give(0, binary_map(g, b, k, [](double x, double y) { return x * y; }));
      if (wants(1)) {
        Tensor ga(a.rows(), a.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] = g.data()[i] * a.data()[i];
        give(1, reduce_to(ga, b, k));
      }
      break;
    }
    case OpKind::Div: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const Bcast k = broadcast_kind(a, b, n.op);
      if (wants(0)) give(0, binary_map(g, b, k, [](double x, double y) { return x / y; }));
      if (wants(1)) {
        Tensor gb(a.rows(), a.cols());
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t j = 0; j < a.cols(); ++j)
            gb(i, j) = -g(i, j) * n.value(i, j) / bval(b, k, i, j);
        give(1, reduce_to(gb, b, k));
      }
      break;
    }
    case OpKind::Scale:
      give(0, unary_map(g, [s = n.a](double x) { return s * x; }));
      break;
    case OpKind::AddScalar:
      give(0, g);
      break;
    case OpKind::Relu: {
      const Tensor& a = in_value(0);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i)
        if (!(a.data()[i] > 0.0)) ga.data()[i] = 0.0;
      give(0, ga);
      break;
    }
    case OpKind::Exp: {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] *= n.value.data()[i];
      give(0, ga);
      break;
    }
    case OpKind::Log: {
      const Tensor& a = in_value(0);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const double x = a.data()[i];
        ga.data()[i] = x > n.a ? ga.data()[i] / x : 0.0;
      }
      give(0, ga);
      break;
    }
    case OpKind::Sqrt: {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] /= 2.0 * n.value.data()[i];
      give(0, ga);
      break;
    }
    case OpKind::Square: {
      const Tensor& a = in_value(0);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] *= 2.0 * a.data()[i];
      give(0, ga);
      break;
    }
    case OpKind::Softmax: {
      const Tensor& y = n.value;
      Tensor ga(y.rows(), y.cols());
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
      }
      give(0, ga);
      break;
    }
    case OpKind::LogSoftmax: {
      const Tensor& y = n.value;
      Tensor ga(y.rows(), y.cols());
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) s += g(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) = g(i, j) - std::exp(y(i, j)) * s;
      }
      give(0, ga);
      break;
    }
    case OpKind::LogSumExp: {
      const Tensor& a = in_value(0);
      Tensor ga(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
          ga(i, j) = g(i, 0) * std::exp(a(i, j) - n.value(i, 0));
      give(0, ga);
      break;
    }
    case OpKind::L2Normalize: {
      const Tensor& y = n.value;
      Tensor ga(y.rows(), y.cols());
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += y(i, j) * g(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j)
          ga(i, j) = (g(i, j) - y(i, j) * dot) / n.aux[i];
      }
      give(0, ga);
      break;
    }
    case OpKind::ConcatRows: {
      const std::size_t split = in_value(0).rows();
      if (wants(0)) give(0, num::slice_rows(g, 0, split));
      if (wants(1)) give(1, num::slice_rows(g, split, g.rows()));
      break;
    }
    case OpKind::SliceRows: {
      const Tensor& a = in_value(0);
      Tensor ga(a.rows(), a.cols());
      const std::size_t begin = n.index[0];
      std::copy(g.data().begin(), g.data().end(),
                ga.data().begin() + static_cast<std::ptrdiff_t>(begin * a.cols()));
      give(0, ga);
      break;
    }
    case OpKind::Transpose:
      give(0, num::transpose(g));
      break;
    case OpKind::Sum:
    case OpKind::Mean: {
      const Tensor& a = in_value(0);
      const double v =
          n.op == OpKind::Sum ? g.item() : g.item() / static_cast<double>(a.size());
      give(0, Tensor(a.rows(), a.cols(), v));
      break;
    }
    case OpKind::SumRows: {
      const Tensor& a = in_value(0);
      Tensor ga(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) ga(i, j) = g(i, 0);
      give(0, ga);
      break;
    }
    case OpKind::MeanCols: {
      const Tensor& a = in_value(0);
      Tensor ga(a.rows(), a.cols());
      const double inv = 1.0 / static_cast<double>(a.rows());
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) ga(i, j) = g(0, j) * inv;
      give(0, ga);
      break;
    }
    case OpKind::Clamp: {
      const Tensor& a = in_value(0);
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const double x = a.data()[i];
        if (x < n.a || x > n.b) ga.data()[i] = 0.0;
      }
      give(0, ga);
      break;
    }
    case OpKind::Pick: {
      const Tensor& a = in_value(0);
      Tensor ga(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.rows(); ++i) ga(i, n.index[i]) = g(i, 0);
      give(0, ga);
      break;
    }
  }
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  auto n = make_node(OpKind::MatMul, g, {a, b});
  n.value = matmul(a.value(), b.value());
  return g.push(std::move(n));
}

Var add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::Sub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }
Var div(Var a, Var b) { return binary(OpKind::Div, a, b); }

Var scale(Var a, double s) {
  return unary(OpKind::Scale, a, unary_map(a.value(), [s](double x) { return s * x; }), s);
}

Var add_scalar(Var a, double s) {
  return unary(OpKind::AddScalar, a, unary_map(a.value(), [s](double x) { return x + s; }), s);
}

Var relu(Var a) { return unary(OpKind::Relu, a, relu(a.value())); }

Var exp(Var a) {
  return unary(OpKind::Exp, a, unary_map(a.value(), [](double x) { return std::exp(x); }));
}

Var log(Var a, double floor) {
  return unary(OpKind::Log, a,
               unary_map(a.value(), [floor](double x) { return std::log(std::max(x, floor)); }),
               floor);
}

Var sqrt(Var a) {
  return unary(OpKind::Sqrt, a, unary_map(a.value(), [](double x) { return std::sqrt(x); }));
}

Var square(Var a) {
  return unary(OpKind::Square, a, unary_map(a.value(), [](double x) { return x * x; }));
}

Var softmax_rows(Var a) { return unary(OpKind::Softmax, a, softmax_rows(a.value())); }

Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < r.size(); ++j) out(i, j) = r[j] - lse;
  }
  return unary(OpKind::LogSoftmax, a, std::move(out));
}

Var logsumexp_rows(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    out(i, 0) = mx + std::log(s);
  }
  return unary(OpKind::LogSumExp, a, std::move(out));
}

Var l2_normalize_rows(Var a) {
  Graph& g = *a.graph;
  auto n = make_node(OpKind::L2Normalize, g, {a});
  const Tensor& x = a.value();
  n.aux.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v * v;
    n.aux[i] = std::sqrt(s);
  }
  n.value = num::l2_normalize_rows(x);
  return g.push(std::move(n));
}

Var concat_rows(Var a, Var b) {
  Graph& g = same_graph(a, b);
  if (a.value().cols() != b.value().cols()) {
    throw ConfigError("concat_rows: shape mismatch " + a.value().shape_str() + " vs " +
                      b.value().shape_str());
  }
  auto n = make_node(OpKind::ConcatRows, g, {a, b});
  n.value = concat_rows(a.value(), b.value());
  return g.push(std::move(n));
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Graph& g = *a.graph;
  auto n = make_node(OpKind::SliceRows, g, {a});
  n.value = slice_rows(a.value(), begin, end);
  n.index = {begin, end};
  return g.push(std::move(n));
}

Var transpose(Var a) { return unary(OpKind::Transpose, a, transpose(a.value())); }

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return unary(OpKind::Sum, a, Tensor::scalar(s));
}

Var mean(Var a) {
  const Tensor& x = a.value();
  if (x.empty()) throw ConfigError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return unary(OpKind::Mean, a, Tensor::scalar(s / static_cast<double>(x.size())));
}

Var sum_rows(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v;
    out(i, 0) = s;
  }
  return unary(OpKind::SumRows, a, std::move(out));
}

Var mean_cols(Var a) {
  const Tensor& x = a.value();
  if (x.rows() == 0) throw ConfigError("mean_cols: no rows");
  Tensor out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
  for (double& v : out.data()) v /= static_cast<double>(x.rows());
  return unary(OpKind::MeanCols, a, std::move(out));
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw ConfigError("clamp: lo > hi");
  return unary(OpKind::Clamp, a,
               unary_map(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); }), lo, hi);
}

Var pick(Var a, std::span<const std::size_t> idx) {
  const Tensor& x = a.value();
  if (idx.size() != x.rows()) {
    throw ConfigError("pick: " + std::to_string(idx.size()) + " indices for " + x.shape_str());
  }
  Graph& g = *a.graph;
  auto n = make_node(OpKind::Pick, g, {a});
  n.value = Tensor(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (idx[i] >= x.cols()) throw ConfigError("pick: column index out of range");
    n.value(i, 0) = x(i, idx[i]);
  }
  n.index.assign(idx.begin(), idx.end());
  return g.push(std::move(n));
}

}  // namespace c2d::num
