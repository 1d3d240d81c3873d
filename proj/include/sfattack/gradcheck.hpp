#ifndef SFATTACK_GRADCHECK_HPP
#define SFATTACK_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sfattack/autodiff.hpp"

namespace sfattack::ad {

/// A differentiable computation over seeded random leaves.
struct GraphRecipe {
  std::function<std::vector<Tensor>(std::uint64_t seed)> leaves;
  std::function<Var(Graph&, std::span<const Var>)> build;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor: below it the comparison is absolute at tolerance * floor (1e-8).
  double floor = 1e-4;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  std::size_t coordinates = 0;
};

inline double gradient_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares backward() against central finite differences on every leaf coordinate.
inline GradcheckReport gradcheck(const std::vector<Tensor>& leaf_values,
                                 const std::function<Var(Graph&, std::span<const Var>)>& build,
                                 const GradcheckOptions& opt = {}) {
  auto evaluate = [&](const std::vector<Tensor>& values) {
    Graph g;
    std::vector<Var> leaves;
    leaves.reserve(values.size());
    for (const auto& v : values) leaves.push_back(g.leaf(v));
    const double out = build(g, leaves).value().item();
    if (!std::isfinite(out)) throw DomainError("gradcheck: non-finite forward value");
    return out;
  };

  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& v : leaf_values) leaves.push_back(g.leaf(v));
    Var root = build(g, leaves);
    if (!std::isfinite(root.value().item())) throw DomainError("gradcheck: non-finite forward value");
    Gradients grads = g.backward(root);
    for (Var leaf : leaves) analytic.push_back(grads[leaf]);
  }

  GradcheckReport report;
  std::vector<Tensor> probe = leaf_values;
  for (std::size_t l = 0; l < probe.size(); ++l) {
    for (std::size_t i = 0; i < probe[l].size(); ++i) {
      const double x = probe[l][i];
      probe[l][i] = x + opt.step;
      const double up = evaluate(probe);
      probe[l][i] = x - opt.step;
      const double down = evaluate(probe);
      probe[l][i] = x;
      const double numeric = (up - down) / (2.0 * opt.step);
      report.max_rel_err = std::max(report.max_rel_err, gradient_error(analytic[l][i], numeric, opt.floor));
      ++report.coordinates;
    }
  }
  report.pass = report.max_rel_err < opt.tolerance;
  return report;
}

inline GradcheckReport gradcheck(const GraphRecipe& recipe, std::uint64_t seed, const GradcheckOptions& opt = {}) {
  return gradcheck(recipe.leaves(seed), recipe.build, opt);
}

}  // namespace sfattack::ad

#endif  // SFATTACK_GRADCHECK_HPP
