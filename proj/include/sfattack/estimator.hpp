#ifndef SFATTACK_ESTIMATOR_HPP
#define SFATTACK_ESTIMATOR_HPP

#include <optional>
#include <string>

#include "sfattack/autodiff.hpp"
#include "sfattack/pointcloud.hpp"

namespace sfattack {

/// A scene-flow estimator f(PC1, PC2) expressed on a differentiation graph.
///
/// Implementations must be stateless across calls so that one instance can
/// serve concurrent estimations of distinct pairs.
class Estimator {
 public:
  virtual ~Estimator() = default;

  virtual std::string tag() const = 0;
  /// Canonical description of the configuration; identical configs give identical strings.
  virtual std::string config() const = 0;

  /// N x 3 flow for `pair`, where pc1 positions (and colors, when the pair has
  /// them) are taken from `pos1` / `col1` rather than from the pair itself.
  virtual ad::Var build(ad::Graph& g, const ScenePair& pair, ad::Var pos1, std::optional<ad::Var> col1) const = 0;

  FlowField estimate(const ScenePair& pair) const {
    ad::Graph g;
    std::optional<ad::Var> col1;
    if (pair.pc1.colors) col1 = g.constant(*pair.pc1.colors);
    return FlowField{build(g, pair, g.constant(pair.pc1.positions), col1).value()};
  }
};

/// Mean over rows of the Euclidean distance between predicted and true flow.
inline ad::Var epe_loss(ad::Var pred, ad::Var gt) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("epe_loss: shape mismatch " + Tensor::shape_string(pred.shape()) + " vs " +
                         Tensor::shape_string(gt.shape()));
  }
  return ad::mean(ad::row_norm(ad::sub(pred, gt)));
}

inline double epe(const FlowField& pred, const FlowField& gt) {
  ad::Graph g;
  return epe_loss(g.constant(pred.vectors), g.constant(gt.vectors)).value().item();
}

/// Outputs zero displacement; its AEPE is the mean ground-truth flow magnitude.
class ZeroFlowEstimator final : public Estimator {
 public:
  std::string tag() const override { return "zero"; }
  std::string config() const override { return "zero"; }
  ad::Var build(ad::Graph& g, const ScenePair&, ad::Var pos1, std::optional<ad::Var>) const override {
    return ad::scale(pos1, 0.0);
  }
};

}  // namespace sfattack

#endif  // SFATTACK_ESTIMATOR_HPP
