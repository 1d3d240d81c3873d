#ifndef SFATTACK_OT_HPP
#define SFATTACK_OT_HPP

// Entropic optimal-transport flow estimator.
//
// cost(i, j) = |p_i - q_j|^2 / median + color_weight * |c_i - d_j|^2
// plan       = sinkhorn(cost)               (row-stochastic)
// flow_i     = sum_j plan_ij q_j - p_i

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "sfattack/autodiff.hpp"
#include "sfattack/estimator.hpp"

namespace sfattack {

struct OTConfig {
  double reg = 0.05;
  int sinkhorn_iters = 30;
  double color_weight = 1.0;

  void validate() const {
    if (!(reg > 0.0) || !std::isfinite(reg)) throw ValidationError("OTConfig: reg must be > 0");
    if (sinkhorn_iters < 1) throw ValidationError("OTConfig: sinkhorn_iters must be >= 1");
    if (!(color_weight >= 0.0) || !std::isfinite(color_weight)) throw ValidationError("OTConfig: color_weight must be >= 0");
  }
};

namespace detail {

/// Single entry (r, c) of a matrix node as a 1 x 1 node.
inline ad::Var entry(ad::Var m, std::size_t r, std::size_t c) {
  ad::Graph& g = *m.graph();
  const std::size_t row[] = {r};
  Tensor onehot = Tensor::zeros({m.value().cols(), 1});
  onehot[c] = 1.0;
  return ad::matmul(ad::gather_rows(m, row), g.constant(std::move(onehot)));
}

/// Divides a nonnegative matrix by its median entry (mean of the two middle
/// order statistics). Falls back to the max entry when the median is zero and
/// leaves an all-zero matrix untouched.
inline ad::Var median_normalize(ad::Var cost) {
  const Tensor& v = cost.value();
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  const std::size_t cols = v.cols();
  auto pick = [&](std::size_t flat) { return entry(cost, flat / cols, flat % cols); };

  ad::Var scale_node;
  const std::size_t hi = order[n / 2];
  const std::size_t lo = order[(n - 1) / 2];
  if (v[lo] + v[hi] > 0.0) {
    scale_node = lo == hi ? pick(hi) : ad::scale(ad::add(pick(lo), pick(hi)), 0.5);
  } else if (v[order.back()] > 0.0) {
    scale_node = pick(order.back());
  } else {
    return cost;
  }
  return ad::mul(cost, ad::broadcast(ad::reciprocal(scale_node), cost.shape()));
}

inline void require_positive_sums(const Tensor& sums, const char* what) {
  for (double s : sums.data())
    if (!(s > 0.0)) throw NumericError(std::string("sinkhorn: degenerate all-zero ") + what + " after underflow");
}

}  // namespace detail

/// Entropic transport plan for `cost`, unrolled so it stays differentiable.
/// Marginals are 1/N over rows and 1/M over columns; the returned plan is
/// rescaled so that every row sums to one.
inline ad::Var sinkhorn(ad::Var cost, double reg, int iters) {
  if (!(reg > 0.0)) throw ValidationError("sinkhorn: reg must be > 0");
  if (iters < 1) throw ValidationError("sinkhorn: iters must be >= 1");
  const Tensor& cv = cost.value();
  if (cv.rank() != 2 || cv.size() == 0) throw DimensionError("sinkhorn: cost must be a nonempty matrix");
  if (!cv.all_finite()) throw DomainError("sinkhorn: non-finite cost");
  const std::size_t n = cv.rows(), m = cv.cols();

  ad::Var plan = ad::exp(ad::scale(detail::median_normalize(cost), -1.0 / reg));
  auto normalize_rows = [&](double target) {
    ad::Var sums = ad::row_sum(plan);
    detail::require_positive_sums(sums.value(), "row");
    plan = ad::mul(plan, ad::repeat_cols(ad::scale(ad::reciprocal(sums), target), m));
  };
  for (int t = 0; t < iters; ++t) {
    normalize_rows(1.0 / static_cast<double>(n));
    ad::Var sums = ad::col_sum(plan);
    detail::require_positive_sums(sums.value(), "column");
    plan = ad::mul(plan, ad::broadcast(ad::scale(ad::reciprocal(sums), 1.0 / static_cast<double>(m)), plan.shape()));
  }
  normalize_rows(1.0);
  return plan;
}

/// Barycentric OT flow on a graph. Colors enter the cost only when the pair carries them.
inline ad::Var ot_flow(ad::Graph& g, const ScenePair& pair, ad::Var pos1, std::optional<ad::Var> col1,
                       const OTConfig& cfg) {
  cfg.validate();
  ad::Var pos2 = g.constant(pair.pc2.positions);
  ad::Var cost = detail::median_normalize(ad::pairwise_sqdist(pos1, pos2));
  if (cfg.color_weight > 0.0 && col1 && pair.pc2.colors) {
    ad::Var col2 = g.constant(*pair.pc2.colors);
    cost = ad::add(cost, ad::scale(ad::pairwise_sqdist(*col1, col2), cfg.color_weight));
  }
  ad::Var plan = sinkhorn(cost, cfg.reg, cfg.sinkhorn_iters);
  return ad::sub(ad::matmul(plan, pos2), pos1);
}

class OtEstimator final : public Estimator {
 public:
  explicit OtEstimator(OTConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  std::string tag() const override { return "ot"; }
  std::string config() const override {
    char buf[128];
    std::snprintf(buf, sizeof buf, "ot:reg=%.17g,iters=%d,color_weight=%.17g", cfg_.reg, cfg_.sinkhorn_iters,
                  cfg_.color_weight);
    return buf;
  }
  const OTConfig& settings() const noexcept { return cfg_; }

  ad::Var build(ad::Graph& g, const ScenePair& pair, ad::Var pos1, std::optional<ad::Var> col1) const override {
    return ot_flow(g, pair, pos1, col1, cfg_);
  }

 private:
  OTConfig cfg_;
};

inline FlowField ot_estimate(const ScenePair& pair, const OTConfig& cfg = {}) { return OtEstimator(cfg).estimate(pair); }

}  // namespace sfattack

#endif  // SFATTACK_OT_HPP
