#ifndef SFATTACK_ATTACKS_HPP
#define SFATTACK_ATTACKS_HPP

// White-box L-infinity attacks on the first point cloud of a scene pair.
//
// The adversary maximizes EPE(gt_flow, f(pc1 + delta, pc2)) subject to
// |delta|_inf <= eps on the targeted axes of one domain (positions or colors),
// delta = 0 everywhere else. Ground-truth flow is never modified.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "sfattack/autodiff.hpp"
#include "sfattack/estimator.hpp"
#include "sfattack/pointcloud.hpp"
#include "sfattack/rng.hpp"

namespace sfattack {

enum class TargetDomain { kPositions, kColors };

struct TargetMask {
  TargetDomain domain = TargetDomain::kPositions;
  std::array<bool, 3> axes{true, true, true};

  bool all() const noexcept { return axes[0] && axes[1] && axes[2]; }
  bool any() const noexcept { return axes[0] || axes[1] || axes[2]; }

  /// Canonical text form, accepted back by make_target_mask.
  std::string spec() const {
    const bool pos = domain == TargetDomain::kPositions;
    if (all()) return pos ? "all-dims" : "all-channels";
    std::string s = pos ? "dim=" : "channel=";
    bool first = true;
    for (std::size_t i = 0; i < 3; ++i) {
      if (!axes[i]) continue;
      if (!first) s += ",";
      s += std::to_string(i);
      first = false;
    }
    return s;
  }

  friend bool operator==(const TargetMask&, const TargetMask&) = default;
};

/// Parses "all-dims", "dim=<i>[,<j>...]", "all-channels", "channel=<i>[,<j>...]".
/// Indices are 0-based: "dim=1" is the second (y) coordinate.
inline TargetMask make_target_mask(std::string_view spec) {
  auto fail = [&](const std::string& why) -> TargetMask {
    throw ParseError("target mask '" + std::string(spec) + "': " + why);
  };
  if (spec == "all-dims") return {TargetDomain::kPositions, {true, true, true}};
  if (spec == "all-channels") return {TargetDomain::kColors, {true, true, true}};

  TargetMask mask{TargetDomain::kPositions, {false, false, false}};
  std::optional<TargetDomain> domain;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t comma = spec.find(',', pos);
    std::string_view tok = spec.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    pos = comma == std::string_view::npos ? spec.size() + 1 : comma + 1;

    std::optional<TargetDomain> tok_domain;
    if (tok.starts_with("dim=")) {
      tok_domain = TargetDomain::kPositions;
      tok.remove_prefix(4);
    } else if (tok.starts_with("channel=")) {
      tok_domain = TargetDomain::kColors;
      tok.remove_prefix(8);
    }
    if (tok_domain) {
      if (domain && *domain != *tok_domain) return fail("mixes dimensions and channels");
      domain = tok_domain;
    } else if (!domain) {
      return fail("expected all-dims, all-channels, dim=<i> or channel=<i>");
    }
    unsigned idx = 0;
    auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
    if (ec != std::errc() || end != tok.data() + tok.size() || tok.empty()) return fail("bad index '" + std::string(tok) + "'");
    if (idx > 2) return fail("index out of range 0..2");
    mask.axes[idx] = true;
  }
  mask.domain = *domain;
  return mask;
}

inline void check_mask(const TargetMask& mask, const ScenePair& pair) {
  if (!mask.any()) throw ValidationError("target mask selects no axis");
  if (mask.domain == TargetDomain::kColors && !pair.has_colors())
    throw ValidationError("target mask '" + mask.spec() + "' needs colors but pair '" + pair.id + "' has none");
}

enum class AttackKind { kNone, kFgsm, kPgd, kRandom };
enum class RandomMode { kUniform, kRademacher };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::kNone: return "none";
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kRandom: return "random";
  }
  return "?";
}

inline AttackKind parse_attack_kind(std::string_view s) {
  if (s == "none") return AttackKind::kNone;
  if (s == "fgsm") return AttackKind::kFgsm;
  if (s == "pgd") return AttackKind::kPgd;
  if (s == "random") return AttackKind::kRandom;
  throw ParseError("unknown attack '" + std::string(s) + "'");
}

struct AttackConfig {
  AttackKind kind = AttackKind::kFgsm;
  double eps = 0.1;
  int iters = 1;
  std::optional<double> alpha;  // empty: AUTO, 2.5 * eps / iters
  TargetMask mask;
  bool random_start = false;
  bool clamp_colors = true;
  RandomMode random_mode = RandomMode::kUniform;
  std::uint64_t seed = 0;

  double step_size() const { return alpha ? *alpha : 2.5 * eps / static_cast<double>(iters); }

  void validate() const {
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ValidationError("attack: eps must be finite and > 0");
    if (iters < 1) throw ValidationError("attack: iters must be >= 1");
    if (alpha && (!(*alpha > 0.0) || !std::isfinite(*alpha))) throw ValidationError("attack: alpha must be finite and > 0");
    if (!mask.any()) throw ValidationError("attack: target mask selects no axis");
  }

  /// Canonical description; the seed is excluded.
  std::string canonical() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s|%s|eps=%.17g|iters=%d|alpha=%.17g|random_start=%d|clamp=%d|mode=%s",
                  to_string(kind), mask.spec().c_str(), eps, iters, step_size(), random_start ? 1 : 0,
                  clamp_colors ? 1 : 0, random_mode == RandomMode::kUniform ? "uniform" : "rademacher");
    return buf;
  }
};

struct AttackResult {
  PointCloud adv_pc1;
  Tensor delta = Tensor::zeros({0, 3});
  double loss_before = 0.0;
  double loss_after = 0.0;
  int iters_run = 0;

  friend bool operator==(const AttackResult&, const AttackResult&) = default;
};

/// EPE between the estimate on `pair` and its (constant) ground truth, on graph `g`.
inline ad::Var attack_loss(ad::Graph& g, const ScenePair& pair, const Estimator& est, ad::Var pos1,
                           std::optional<ad::Var> col1) {
  if (!pair.gt_flow) throw ContractError("attack_loss: pair '" + pair.id + "' has no ground-truth flow");
  ad::Var flow = est.build(g, pair, pos1, col1);
  return epe_loss(flow, g.constant(pair.gt_flow->vectors));
}

inline double attack_loss(const ScenePair& pair, const Estimator& est) {
  ad::Graph g;
  std::optional<ad::Var> col1;
  if (pair.pc1.colors) col1 = g.constant(*pair.pc1.colors);
  return attack_loss(g, pair, est, g.constant(pair.pc1.positions), col1).value().item();
}

struct LossGradient {
  double loss = 0.0;
  Tensor grad;
};

/// Loss and its gradient with respect to the pc1 block of `domain`.
inline LossGradient attack_gradient(const ScenePair& pair, const Estimator& est, TargetDomain domain) {
  ad::Graph g;
  const bool on_colors = domain == TargetDomain::kColors;
  ad::Var pos1 = on_colors ? g.constant(pair.pc1.positions) : g.leaf(pair.pc1.positions);
  std::optional<ad::Var> col1;
  if (pair.pc1.colors) col1 = on_colors ? g.leaf(*pair.pc1.colors) : g.constant(*pair.pc1.colors);
  ad::Var loss = attack_loss(g, pair, est, pos1, col1);
  const double value = loss.value().item();
  ad::Gradients grads = g.backward(loss);
  return {value, grads[on_colors ? *col1 : pos1]};
}

namespace detail {

inline Tensor& target_block(PointCloud& pc, TargetDomain d) {
  return d == TargetDomain::kColors ? *pc.colors : pc.positions;
}
inline const Tensor& target_block(const PointCloud& pc, TargetDomain d) {
  return d == TargetDomain::kColors ? *pc.colors : pc.positions;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline AttackResult finish(const ScenePair& pair, ScenePair& adv, const TargetMask& mask, const Estimator& est,
                           double loss_before, int iters_run) {
  const Tensor& orig = target_block(pair.pc1, mask.domain);
  const Tensor& now = target_block(adv.pc1, mask.domain);
  AttackResult r;
  r.delta = Tensor::zeros({orig.rows(), 3});
  for (std::size_t i = 0; i < orig.rows(); ++i)
    for (std::size_t k = 0; k < 3; ++k)
      if (mask.axes[k]) r.delta(i, k) = now(i, k) - orig(i, k);
  r.loss_before = loss_before;
  r.loss_after = attack_loss(adv, est);
  r.iters_run = iters_run;
  r.adv_pc1 = std::move(adv.pc1);
  return r;
}

}  // namespace detail

/// Projected sign-gradient ascent:
///   x <- clip(x + alpha * sign(grad), pc1 - eps, pc1 + eps)  on masked axes,
/// colors additionally clipped to [0, 1] when clamp_colors.
inline AttackResult pgd_sf(const ScenePair& pair, const Estimator& est, const AttackConfig& cfg) {
  cfg.validate();
  check_mask(cfg.mask, pair);
  if (!pair.gt_flow) throw ContractError("attack: pair '" + pair.id + "' has no ground-truth flow");
  const TargetDomain domain = cfg.mask.domain;
  const bool clamp = domain == TargetDomain::kColors && cfg.clamp_colors;
  const double alpha = cfg.step_size();
  const Tensor& orig = detail::target_block(pair.pc1, domain);

  ScenePair adv = pair;
  Tensor& x = detail::target_block(adv.pc1, domain);
  auto project = [&](std::size_t i, std::size_t k, double v) {
    v = std::clamp(v, orig(i, k) - cfg.eps, orig(i, k) + cfg.eps);
    return clamp ? std::clamp(v, 0.0, 1.0) : v;
  };

  std::optional<double> loss_before;
  if (cfg.random_start) {
    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> u(-cfg.eps, cfg.eps);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t k = 0; k < 3; ++k)
        if (cfg.mask.axes[k]) x(i, k) = project(i, k, x(i, k) + u(rng));
    loss_before = attack_loss(pair, est);
  }

  for (int t = 0; t < cfg.iters; ++t) {
    const LossGradient lg = attack_gradient(adv, est, domain);
    if (!loss_before) loss_before = lg.loss;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t k = 0; k < 3; ++k)
        if (cfg.mask.axes[k]) x(i, k) = project(i, k, x(i, k) + alpha * detail::sign(lg.grad(i, k)));
  }
  return detail::finish(pair, adv, cfg.mask, est, *loss_before, cfg.iters);
}

/// One signed step of size eps: pc1 + eps * sign(grad) on the masked axes.
inline AttackResult fgsm_sf(const ScenePair& pair, const Estimator& est, const AttackConfig& cfg) {
  AttackConfig one = cfg;
  one.iters = 1;
  one.alpha = cfg.eps;
  one.random_start = false;
  return pgd_sf(pair, est, one);
}

/// Uniform(-eps, eps) (or Rademacher +-eps) noise on the masked axes.
inline AttackResult random_attack(const ScenePair& pair, const Estimator& est, const AttackConfig& cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  check_mask(cfg.mask, pair);
  const TargetDomain domain = cfg.mask.domain;
  const bool clamp = domain == TargetDomain::kColors && cfg.clamp_colors;
  const double loss_before = attack_loss(pair, est);

  Rng rng(seed);
  std::uniform_real_distribution<double> u(-cfg.eps, cfg.eps);
  std::bernoulli_distribution coin(0.5);
  ScenePair adv = pair;
  Tensor& x = detail::target_block(adv.pc1, domain);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (!cfg.mask.axes[k]) continue;
      const double d = cfg.random_mode == RandomMode::kUniform ? u(rng) : (coin(rng) ? cfg.eps : -cfg.eps);
      const double v = x(i, k) + d;
      x(i, k) = clamp ? std::clamp(v, 0.0, 1.0) : v;
    }
  }
  return detail::finish(pair, adv, cfg.mask, est, loss_before, 0);
}

/// Dispatches on cfg.kind; "none" returns the unmodified cloud.
inline AttackResult run_attack(const ScenePair& pair, const Estimator& est, const AttackConfig& cfg) {
  switch (cfg.kind) {
    case AttackKind::kFgsm: return fgsm_sf(pair, est, cfg);
    case AttackKind::kPgd: return pgd_sf(pair, est, cfg);
    case AttackKind::kRandom: return random_attack(pair, est, cfg, cfg.seed);
    case AttackKind::kNone: break;
  }
  const double loss = attack_loss(pair, est);
  return {pair.pc1, Tensor::zeros({pair.pc1.size(), 3}), loss, loss, 0};
}

/// Every broken feasibility invariant of `r` for an attack of `cfg` on `pair`.
inline std::vector<std::string> feasibility_violations(const ScenePair& pair, const AttackConfig& cfg,
                                                       const AttackResult& r) {
  std::vector<std::string> out;
  const std::size_t n = pair.pc1.size();
  if (r.delta.rank() != 2 || r.delta.rows() != n || r.delta.cols() != 3) return {"delta shape"};
  const TargetDomain other = cfg.mask.domain == TargetDomain::kPositions ? TargetDomain::kColors : TargetDomain::kPositions;
  const Tensor& orig = detail::target_block(pair.pc1, cfg.mask.domain);
  const Tensor& adv = detail::target_block(r.adv_pc1, cfg.mask.domain);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double d = r.delta(i, k);
      if (std::abs(d) > cfg.eps + 1e-12) out.push_back("|delta| > eps");
      if (!cfg.mask.axes[k] && (d != 0.0 || adv(i, k) != orig(i, k))) out.push_back("nonzero delta off-mask");
      if (cfg.mask.axes[k] && adv(i, k) != orig(i, k) + d && std::abs(adv(i, k) - (orig(i, k) + d)) > 1e-12)
        out.push_back("adv != pc1 + delta");
    }
  }
  if (other == TargetDomain::kColors && pair.pc1.colors && r.adv_pc1.colors != pair.pc1.colors)
    out.push_back("colors changed by a position attack");
  if (other == TargetDomain::kPositions && !(r.adv_pc1.positions == pair.pc1.positions))
    out.push_back("positions changed by a color attack");
  if (r.adv_pc1.colors && cfg.clamp_colors)
    for (double v : r.adv_pc1.colors->data())
      if (v < 0.0 || v > 1.0) out.push_back("color outside [0,1]");
  return out;
}

}  // namespace sfattack

#endif  // SFATTACK_ATTACKS_HPP
