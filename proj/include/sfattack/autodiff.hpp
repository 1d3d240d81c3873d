#ifndef SFATTACK_AUTODIFF_HPP
#define SFATTACK_AUTODIFF_HPP

// Tape-based reverse-mode differentiation over dense Tensors.
//
// A Graph records every primitive as an appended node; parents always have a
// smaller index than their children, so backward() is a single reverse sweep.
// A graph supports exactly one backward() call.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sfattack/error.hpp"
#include "sfattack/tensor.hpp"

namespace sfattack::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kExp,
  kLog,
  kSqrt,
  kRelu,
  kSum,
  kMean,
  kRowSum,
  kBroadcast,
  kConcat,
  kGatherRows,
  kRowNorm,
  kPairwiseSqDist,
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its Graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor::Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Graph* graph() const noexcept { return graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar root with respect to every differentiable leaf.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const {
    auto it = by_leaf_.find(leaf.id());
    if (it == by_leaf_.end()) throw ContractError("no gradient recorded for node " + std::to_string(leaf.id()));
    return it->second;
  }
  bool contains(Var leaf) const { return by_leaf_.count(leaf.id()) != 0; }
  std::size_t size() const noexcept { return by_leaf_.size(); }

 private:
  friend class Graph;
  std::unordered_map<std::size_t, Tensor> by_leaf_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value) { return push(Op::kLeaf, {}, std::move(value), true); }
  /// Input excluded from differentiation.
  Var constant(Tensor value) { return push(Op::kConstant, {}, std::move(value), false); }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  Gradients backward(Var root);

 private:
  struct Node {
    Op op;
    std::array<std::size_t, 2> parents{};
    std::uint8_t arity = 0;
    bool needs_grad = false;
    Tensor value;
    double scalar = 0.0;
    std::size_t axis = 0;
    std::vector<std::size_t> indices;
  };

  Var push(Op op, std::initializer_list<Var> parents, Tensor value, bool leaf_grad = false) {
    if (consumed_) throw ContractError("graph already consumed by backward()");
    Node node;
    node.op = op;
    node.value = std::move(value);
    node.needs_grad = leaf_grad;
    for (Var p : parents) {
      if (p.graph_ != this) throw ContractError("operands belong to different graphs");
      node.parents[node.arity++] = p.id_;
      node.needs_grad = node.needs_grad || nodes_[p.id_].needs_grad;
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  Node& node(Var v) { return nodes_[v.id_]; }

  friend Var add(Var, Var);
  friend Var sub(Var, Var);
  friend Var mul(Var, Var);
  friend Var scale(Var, double);
  friend Var matmul(Var, Var);
  friend Var exp(Var);
  friend Var log(Var);
  friend Var sqrt(Var);
  friend Var relu(Var);
  friend Var sum(Var);
  friend Var mean(Var);
  friend Var row_sum(Var);
  friend Var broadcast(Var, const Tensor::Shape&);
  friend Var concat(Var, Var, std::size_t);
  friend Var gather_rows(Var, std::span<const std::size_t>);
  friend Var row_norm(Var);
  friend Var pairwise_sqdist(Var, Var);

  std::deque<Node> nodes_;  // stable addresses: values may be referenced across pushes
  bool consumed_ = false;
};

inline const Tensor& Var::value() const {
  if (!graph_) throw ContractError("unbound Var");
  return graph_->value(id_);
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + Tensor::shape_string(a.shape()) + " vs " +
                         Tensor::shape_string(b.shape()));
  }
}

inline void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + Tensor::shape_string(a.shape()));
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out = a;
  for (double& v : out.data()) v = f(v);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out = a;
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = f(od[i], bd[i]);
  return out;
}

// out(n x m) += a(n x k) * b(k x m), with optional transposes of the operands.
inline void gemm_acc(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out) {
  const std::size_t n = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t m = tb ? b.rows() : b.cols();
  const std::size_t ac = a.cols(), bc = b.cols();
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? ad[p * ac + i] : ad[i * ac + p];
      if (av == 0.0) continue;
      double* orow = &od[i * m];
      if (!tb) {
        const double* brow = &bd[p * bc];
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * bd[j * bc + p];
      }
    }
  }
}

inline void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Var add(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  return a.graph()->push(Op::kAdd, {a, b}, detail::zip(a.value(), b.value(), [](double x, double y) { return x + y; }));
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  return a.graph()->push(Op::kSub, {a, b}, detail::zip(a.value(), b.value(), [](double x, double y) { return x - y; }));
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  return a.graph()->push(Op::kMul, {a, b}, detail::zip(a.value(), b.value(), [](double x, double y) { return x * y; }));
}

inline Var scale(Var a, double s) {
  Var out = a.graph()->push(Op::kScale, {a}, detail::map(a.value(), [s](double x) { return s * x; }));
  a.graph()->node(out).scalar = s;
  return out;
}

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + Tensor::shape_string(av.shape()) + " x " +
                         Tensor::shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros({av.rows(), bv.cols()});
  detail::gemm_acc(av, false, bv, false, out);
  return a.graph()->push(Op::kMatMul, {a, b}, std::move(out));
}

inline Var exp(Var a) {
  Tensor out = detail::map(a.value(), [](double x) { return std::exp(x); });
  if (!out.all_finite()) throw DomainError("exp: overflow");
  return a.graph()->push(Op::kExp, {a}, std::move(out));
}

inline Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  return a.graph()->push(Op::kLog, {a}, detail::map(a.value(), [](double x) { return std::log(x); }));
}

inline Var sqrt(Var a) {
  for (double v : a.value().data())
    if (!(v >= 0.0)) throw DomainError("sqrt: negative input " + std::to_string(v));
  return a.graph()->push(Op::kSqrt, {a}, detail::map(a.value(), [](double x) { return std::sqrt(x); }));
}

inline Var relu(Var a) {
  return a.graph()->push(Op::kRelu, {a}, detail::map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }));
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph()->push(Op::kSum, {a}, Tensor::scalar(s));
}

inline Var mean(Var a) {
  const auto n = a.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.graph()->push(Op::kMean, {a}, Tensor::scalar(s / static_cast<double>(n)));
}

/// R x C -> R x 1.
inline Var row_sum(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "row_sum");
  Tensor out = Tensor::zeros({av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av(r, c);
    out[r] = s;
  }
  return a.graph()->push(Op::kRowSum, {a}, std::move(out));
}

/// Scalar -> any shape, or a 1 x C row -> R x C.
inline Var broadcast(Var a, const Tensor::Shape& shape) {
  const Tensor& av = a.value();
  Tensor out = Tensor::zeros(shape);
  if (av.size() == 1 && (av.is_scalar() || av.shape() == Tensor::Shape{1, 1})) {
    std::fill(out.data().begin(), out.data().end(), av[0]);
  } else if (av.rank() == 2 && av.rows() == 1 && shape.size() == 2 && shape[1] == av.cols()) {
    for (std::size_t r = 0; r < shape[0]; ++r)
      for (std::size_t c = 0; c < shape[1]; ++c) out(r, c) = av[c];
  } else {
    throw DimensionError("broadcast: cannot expand " + Tensor::shape_string(av.shape()) + " to " +
                         Tensor::shape_string(shape));
  }
  return a.graph()->push(Op::kBroadcast, {a}, std::move(out));
}

/// axis 0 stacks rows, axis 1 stacks columns.
inline Var concat(Var a, Var b, std::size_t axis) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "concat");
  detail::require_matrix(bv, "concat");
  Tensor out;
  if (axis == 0) {
    if (av.cols() != bv.cols()) throw DimensionError("concat(axis 0): column counts differ");
    std::vector<double> d(av.values());
    d.insert(d.end(), bv.values().begin(), bv.values().end());
    out = Tensor::matrix(av.rows() + bv.rows(), av.cols(), std::move(d));
  } else if (axis == 1) {
    if (av.rows() != bv.rows()) throw DimensionError("concat(axis 1): row counts differ");
    const std::size_t cols = av.cols() + bv.cols();
    out = Tensor::zeros({av.rows(), cols});
    for (std::size_t r = 0; r < av.rows(); ++r) {
      for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c);
      for (std::size_t c = 0; c < bv.cols(); ++c) out(r, av.cols() + c) = bv(r, c);
    }
  } else {
    throw DimensionError("concat: axis must be 0 or 1");
  }
  Var v = a.graph()->push(Op::kConcat, {a, b}, std::move(out));
  a.graph()->node(v).axis = axis;
  return v;
}

inline Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "gather_rows");
  Tensor out = Tensor::zeros({rows.size(), av.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw DimensionError("gather_rows: index out of range");
    for (std::size_t c = 0; c < av.cols(); ++c) out(i, c) = av(rows[i], c);
  }
  Var v = a.graph()->push(Op::kGatherRows, {a}, std::move(out));
  a.graph()->node(v).indices.assign(rows.begin(), rows.end());
  return v;
}

/// R x C -> R x 1 of Euclidean row norms. Subgradient at a zero row is zero.
inline Var row_norm(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "row_norm");
  Tensor out = Tensor::zeros({av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) s += av(r, c) * av(r, c);
    out[r] = std::sqrt(s);
  }
  return a.graph()->push(Op::kRowNorm, {a}, std::move(out));
}

/// (N x d, M x d) -> N x M with entry (i, j) = sum_k (a_ik - b_jk)^2.
inline Var pairwise_sqdist(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "pairwise_sqdist");
  detail::require_matrix(bv, "pairwise_sqdist");
  if (av.cols() != bv.cols()) throw DimensionError("pairwise_sqdist: trailing dimensions differ");
  const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = av(i, k) - bv(j, k);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  return a.graph()->push(Op::kPairwiseSqDist, {a, b}, std::move(out));
}

// ---------------------------------------------------------------------------
// Composites built only from primitives.

inline Var neg(Var a) { return scale(a, -1.0); }
inline Var square(Var a) { return mul(a, a); }
/// 1 / a for strictly positive a.
inline Var reciprocal(Var a) { return exp(neg(log(a))); }

/// N x 1 column repeated across `cols` columns.
inline Var repeat_cols(Var column, std::size_t cols) {
  Graph& g = *column.graph();
  return matmul(column, g.constant(Tensor::filled({1, cols}, 1.0)));
}

/// R x C -> 1 x C.
inline Var col_sum(Var a) {
  Graph& g = *a.graph();
  return matmul(g.constant(Tensor::filled({1, a.value().rows()}, 1.0)), a);
}

/// Adds a 1 x C row to every row of an R x C matrix.
inline Var add_row(Var m, Var row) { return add(m, broadcast(row, m.shape())); }

// ---------------------------------------------------------------------------

inline Gradients Graph::backward(Var root) {
  if (root.graph_ != this) throw ContractError("backward: root belongs to another graph");
  if (consumed_) throw ContractError("backward: graph already consumed");
  if (root.value().size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + Tensor::shape_string(root.shape()));
  }
  consumed_ = true;

  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> has(nodes_.size(), false);
  auto acc = [&](std::size_t id) -> Tensor& {
    if (!has[id]) {
      grads[id] = Tensor::zeros(nodes_[id].value.shape());
      has[id] = true;
    }
    return grads[id];
  };

  Gradients result;
  if (!nodes_[root.id_].needs_grad) {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::kLeaf) result.by_leaf_.emplace(i, Tensor::zeros(nodes_[i].value.shape()));
    return result;
  }
  acc(root.id_)[0] = 1.0;

  for (std::size_t id = root.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!has[id] || !n.needs_grad) continue;
    const Tensor& g = grads[id];
    const std::size_t pa = n.parents[0];
    const std::size_t pb = n.parents[1];
    auto wants = [&](std::size_t p) { return nodes_[p].needs_grad; };

    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kAdd:
        if (wants(pa)) detail::accumulate(acc(pa), g);
        if (wants(pb)) detail::accumulate(acc(pb), g);
        break;
      case Op::kSub:
        if (wants(pa)) detail::accumulate(acc(pa), g);
        if (wants(pb)) {
          auto d = acc(pb).data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
        }
        break;
      case Op::kMul:
        if (wants(pa)) {
          auto d = acc(pa).data();
          const Tensor& b = nodes_[pb].value;
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * b[i];
        }
        if (wants(pb)) {
          auto d = acc(pb).data();
          const Tensor& a = nodes_[pa].value;
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * a[i];
        }
        break;
      case Op::kScale: {
        auto d = acc(pa).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += n.scalar * g[i];
        break;
      }
      case Op::kMatMul:
        if (wants(pa)) detail::gemm_acc(g, false, nodes_[pb].value, true, acc(pa));
        if (wants(pb)) detail::gemm_acc(nodes_[pa].value, true, g, false, acc(pb));
        break;
      case Op::kExp: {
        auto d = acc(pa).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * n.value[i];
        break;
      }
      case Op::kLog: {
        auto d = acc(pa).data();
        const Tensor& a = nodes_[pa].value;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / a[i];
        break;
      }
      case Op::kSqrt: {
        // zero subgradient at 0 keeps the tape finite
        auto d = acc(pa).data();
        for (std::size_t i = 0; i < d.size(); ++i)
          if (n.value[i] > 0.0) d[i] += g[i] / (2.0 * n.value[i]);
        break;
      }
      case Op::kRelu: {
        auto d = acc(pa).data();
        const Tensor& a = nodes_[pa].value;
        for (std::size_t i = 0; i < d.size(); ++i)
          if (a[i] > 0.0) d[i] += g[i];
        break;
      }
      case Op::kSum:
      case Op::kMean: {
        auto d = acc(pa).data();
        const double s = n.op == Op::kSum ? g[0] : g[0] / static_cast<double>(d.size());
        for (double& v : d) v += s;
        break;
      }
      case Op::kRowSum: {
        Tensor& ga = acc(pa);
        const std::size_t cols = ga.cols();
        for (std::size_t r = 0; r < ga.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c) ga(r, c) += g[r];
        break;
      }
      case Op::kBroadcast: {
        Tensor& ga = acc(pa);
        if (ga.size() == 1) {
          double s = 0.0;
          for (double v : g.data()) s += v;
          ga[0] += s;
        } else {
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga[c] += g(r, c);
        }
        break;
      }
      case Op::kConcat: {
        const Tensor& a = nodes_[pa].value;
        if (n.axis == 0) {
          const std::size_t split = a.size();
          if (wants(pa)) {
            auto d = acc(pa).data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
          }
          if (wants(pb)) {
            auto d = acc(pb).data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[split + i];
          }
        } else {
          const std::size_t ac = a.cols();
          const std::size_t bc = nodes_[pb].value.cols();
          for (std::size_t r = 0; r < g.rows(); ++r) {
            if (wants(pa))
              for (std::size_t c = 0; c < ac; ++c) acc(pa)(r, c) += g(r, c);
            if (wants(pb))
              for (std::size_t c = 0; c < bc; ++c) acc(pb)(r, c) += g(r, ac + c);
          }
        }
        break;
      }
      case Op::kGatherRows: {
        Tensor& ga = acc(pa);
        const std::size_t cols = ga.cols();
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          for (std::size_t c = 0; c < cols; ++c) ga(n.indices[i], c) += g(i, c);
        break;
      }
      case Op::kRowNorm: {
        Tensor& ga = acc(pa);
        const Tensor& a = nodes_[pa].value;
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const double norm = n.value[r];
          if (norm == 0.0) continue;
          for (std::size_t c = 0; c < a.cols(); ++c) ga(r, c) += g[r] * a(r, c) / norm;
        }
        break;
      }
      case Op::kPairwiseSqDist: {
        const Tensor& a = nodes_[pa].value;
        const Tensor& b = nodes_[pb].value;
        const std::size_t rows = a.rows(), cols = b.rows(), d = a.cols();
        if (wants(pa)) {
          Tensor& ga = acc(pa);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              const double w = 2.0 * g(i, j);
              if (w == 0.0) continue;
              for (std::size_t k = 0; k < d; ++k) ga(i, k) += w * (a(i, k) - b(j, k));
            }
          }
        }
        if (wants(pb)) {
          Tensor& gb = acc(pb);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
              const double w = 2.0 * g(i, j);
              if (w == 0.0) continue;
              for (std::size_t k = 0; k < d; ++k) gb(j, k) -= w * (a(i, k) - b(j, k));
            }
          }
        }
        break;
      }
    }
    if (n.op != Op::kLeaf) {
      grads[id] = Tensor();
      has[id] = false;
    }
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op != Op::kLeaf) continue;
    result.by_leaf_.emplace(i, has[i] ? std::move(grads[i]) : Tensor::zeros(nodes_[i].value.shape()));
  }
  return result;
}

}  // namespace sfattack::ad

#endif  // SFATTACK_AUTODIFF_HPP
