#include <gtest/gtest.h>

#include <cmath>

#include "sfattack/attacks.hpp"
#include "sfattack/gradcheck.hpp"
#include "sfattack/ot.hpp"
#include "sfattack/synthgen.hpp"
#include "sfattack/tinynet.hpp"

using namespace sfattack;

namespace {

// flow_i = -pos1_i, so with gt = 0 the loss is the mean distance to the origin.
class NegatePositions final : public Estimator {
 public:
  std::string tag() const override { return "negate"; }
  std::string config() const override { return "negate"; }
  ad::Var build(ad::Graph&, const ScenePair&, ad::Var pos1, std::optional<ad::Var>) const override {
    return ad::scale(pos1, -1.0);
  }
};

ScenePair fixture_pair() {
  ScenePair p;
  p.id = "fixture";
  p.pc1.positions = Tensor::matrix(1, 3, {1, 2, -1});
  p.pc2.positions = Tensor::matrix(1, 3, {0, 0, 0});
  p.gt_flow = FlowField::zeros(1);
  return p;
}

ScenePair test_pair(std::uint64_t seed, bool color, std::size_t n = 24) {
  MotionSpec spec;
  spec.angle = 0.15;
  spec.axis = {0.6, 0.0, 0.8};
  spec.translation = {0.08, 0.02, -0.03};
  spec.noise_sigma = 0.005;
  return make_pair(n, spec, color, seed);
}

AttackConfig config(AttackKind kind, double eps, int iters, const char* mask = "all-dims") {
  AttackConfig c;
  c.kind = kind;
  c.eps = eps;
  c.iters = iters;
  c.mask = make_target_mask(mask);
  return c;
}

}  // namespace

TEST(TargetMask, Parsing) {
  const TargetMask all = make_target_mask("all-dims");
  EXPECT_EQ(all.domain, TargetDomain::kPositions);
  EXPECT_TRUE(all.all());
  const TargetMask y = make_target_mask("dim=1");
  EXPECT_EQ(y.domain, TargetDomain::kPositions);
  EXPECT_EQ(y.axes, (std::array<bool, 3>{false, true, false}));
  const TargetMask rb = make_target_mask("channel=0,2");
  EXPECT_EQ(rb.domain, TargetDomain::kColors);
  EXPECT_EQ(rb.axes, (std::array<bool, 3>{true, false, true}));
  EXPECT_TRUE(make_target_mask("all-channels").all());
  for (const char* s : {"all-dims", "dim=2", "dim=0,1", "channel=1", "all-channels"})
    EXPECT_EQ(make_target_mask(s).spec(), s);
}

TEST(TargetMask, Errors) {
  for (const char* s : {"", "dims", "dim=3", "dim=", "dim=-1", "dim=1,channel=2", "channel=x", "dim=1,", "all"})
    EXPECT_THROW(make_target_mask(s), ParseError) << s;
  const ScenePair plain = test_pair(1, false);
  EXPECT_THROW(check_mask(make_target_mask("channel=0"), plain), ValidationError);
  EXPECT_THROW(fgsm_sf(plain, OtEstimator(), config(AttackKind::kFgsm, 0.1, 1, "channel=0")), ValidationError);
}

TEST(AttackConfig, AutoAlphaAndValidation) {
  EXPECT_DOUBLE_EQ(config(AttackKind::kPgd, 2.0, 10).step_size(), 0.5);
  AttackConfig c = config(AttackKind::kPgd, 2.0, 10);
  c.alpha = 0.3;
  EXPECT_EQ(c.step_size(), 0.3);
  EXPECT_THROW(config(AttackKind::kPgd, 0.0, 1).validate(), ValidationError);
  EXPECT_THROW(config(AttackKind::kPgd, NAN, 1).validate(), ValidationError);
  EXPECT_THROW(config(AttackKind::kPgd, 0.1, 0).validate(), ValidationError);
  c.alpha = -1;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(AttackLoss, Examples) {
  ScenePair p = test_pair(2, false, 10);
  const ZeroFlowEstimator zero;
  p.gt_flow = FlowField::zeros(10);
  EXPECT_EQ(attack_loss(p, zero), 0.0);
  for (std::size_t i = 0; i < 10; ++i) {
    p.gt_flow->vectors(i, 0) = 3;
    p.gt_flow->vectors(i, 1) = 4;
  }
  EXPECT_NEAR(attack_loss(p, zero), 5.0, 1e-12);
  const ScenePair q = test_pair(3, true);
  EXPECT_EQ(attack_loss(q, OtEstimator()), epe(ot_estimate(q), *q.gt_flow));
  p.gt_flow.reset();
  EXPECT_THROW(attack_loss(p, zero), ContractError);
}

TEST(Fgsm, AnalyticFixture) {
  const ScenePair p = fixture_pair();
  const NegatePositions est;
  // d|p|/dp = p/|p|
  const LossGradient lg = attack_gradient(p, est, TargetDomain::kPositions);
  const double norm = std::sqrt(6.0);
  EXPECT_NEAR(lg.loss, norm, 1e-12);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(lg.grad[k], p.pc1.positions[k] / norm, 1e-12);
  const auto fd = ad::gradcheck({p.pc1.positions}, [&](ad::Graph& g, std::span<const ad::Var> l) {
    return attack_loss(g, p, est, l[0], std::nullopt);
  });
  EXPECT_TRUE(fd.pass);

  const AttackResult all = fgsm_sf(p, est, config(AttackKind::kFgsm, 0.5, 1));
  EXPECT_NEAR(all.adv_pc1.positions(0, 0), 1.5, 1e-12);
  EXPECT_NEAR(all.adv_pc1.positions(0, 1), 2.5, 1e-12);
  EXPECT_NEAR(all.adv_pc1.positions(0, 2), -1.5, 1e-12);
  EXPECT_GT(all.loss_after, all.loss_before);

  const AttackResult x = fgsm_sf(p, est, config(AttackKind::kFgsm, 0.5, 1, "dim=0"));
  EXPECT_NEAR(x.adv_pc1.positions(0, 0), 1.5, 1e-12);
  EXPECT_EQ(x.adv_pc1.positions(0, 1), 2.0);
  EXPECT_EQ(x.adv_pc1.positions(0, 2), -1.0);
  EXPECT_EQ(x.delta(0, 1), 0.0);
  EXPECT_EQ(x.delta(0, 2), 0.0);
}

TEST(Fgsm, ZeroGradientLeavesInputUnchanged) {
  const ScenePair p = test_pair(4, true);
  const TinyNetEstimator est(TinyNetWeights::init(6, 1).with_zero_head());
  for (const char* mask : {"all-dims", "all-channels"}) {
    const AttackResult r = fgsm_sf(p, est, config(AttackKind::kFgsm, 0.1, 1, mask));
    EXPECT_EQ(r.adv_pc1, p.pc1);
    EXPECT_EQ(r.loss_after, r.loss_before);
    for (double d : r.delta.data()) EXPECT_EQ(d, 0.0);
  }
}

TEST(Fgsm, StepsToBoundaryWhereGradientIsNonzero) {
  const ScenePair p = test_pair(5, false);
  const OtEstimator est;
  const LossGradient lg = attack_gradient(p, est, TargetDomain::kPositions);
  const AttackResult r = fgsm_sf(p, est, config(AttackKind::kFgsm, 0.05, 1));
  for (std::size_t i = 0; i < lg.grad.size(); ++i) {
    if (lg.grad[i] != 0.0) EXPECT_NEAR(std::abs(r.delta[i]), 0.05, 1e-12);
    else EXPECT_EQ(r.delta[i], 0.0);
  }
}

TEST(Pgd, ReducesToFgsmBitwise) {
  const OtEstimator ot;
  const TinyNetEstimator tiny(TinyNetWeights::init(6, 3));
  for (std::uint64_t s = 0; s < 6; ++s) {
    const ScenePair p = test_pair(10 + s, true);
    for (const Estimator* est : {static_cast<const Estimator*>(&ot), static_cast<const Estimator*>(&tiny)})
      for (const char* mask : {"all-dims", "dim=2", "channel=1"}) {
        AttackConfig c = config(AttackKind::kPgd, 0.07, 1, mask);
        c.alpha = c.eps;
        EXPECT_EQ(pgd_sf(p, *est, c), fgsm_sf(p, *est, config(AttackKind::kFgsm, 0.07, 1, mask)));
      }
  }
}

TEST(Pgd, EveryIterateIsFeasible) {
  const ScenePair p = test_pair(20, true);
  const OtEstimator est;
  for (const char* mask : {"all-dims", "dim=0,1", "all-channels"}) {
    for (int t = 1; t <= 6; ++t) {
      AttackConfig c = config(AttackKind::kPgd, 0.04, t, mask);
      c.alpha = 0.025;  // fixed step so iters=t reproduces the t-th iterate
      c.random_start = t % 2 == 0;
      c.seed = 99;
      const AttackResult r = pgd_sf(p, est, c);
      EXPECT_EQ(r.iters_run, t);
      EXPECT_TRUE(feasibility_violations(p, c, r).empty()) << mask << " t=" << t;
      EXPECT_EQ(*p.gt_flow, *test_pair(20, true).gt_flow);
    }
  }
}

TEST(Pgd, AtLeastAsStrongAsFgsmOnAverage) {
  const OtEstimator est;
  double fgsm = 0, pgd = 0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const ScenePair p = test_pair(30 + s, false, 32);
    fgsm += fgsm_sf(p, est, config(AttackKind::kFgsm, 0.05, 1)).loss_after;
    pgd += pgd_sf(p, est, config(AttackKind::kPgd, 0.05, 10)).loss_after;
  }
  EXPECT_GE(pgd, fgsm);
}

TEST(Pgd, ColorClamp) {
  ScenePair p = test_pair(40, true);
  (*p.pc1.colors)(0, 0) = 0.0;
  (*p.pc1.colors)(1, 0) = 1.0;
  AttackConfig c = config(AttackKind::kPgd, 0.3, 5, "all-channels");
  const AttackResult r = pgd_sf(p, OtEstimator(), c);
  EXPECT_TRUE(feasibility_violations(p, c, r).empty());
  EXPECT_EQ(r.adv_pc1.positions, p.pc1.positions);
  c.clamp_colors = false;
  const AttackResult u = pgd_sf(p, OtEstimator(), c);
  for (double d : u.delta.data()) EXPECT_LE(std::abs(d), 0.3 + 1e-12);
}

TEST(RandomAttack, DeterministicAndMasked) {
  const ScenePair p = test_pair(50, true);
  const OtEstimator est;
  for (RandomMode mode : {RandomMode::kUniform, RandomMode::kRademacher}) {
    AttackConfig c = config(AttackKind::kRandom, 0.1, 1, "dim=0,2");
    c.random_mode = mode;
    const AttackResult a = random_attack(p, est, c, 7), b = random_attack(p, est, c, 7);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, random_attack(p, est, c, 8));
    EXPECT_TRUE(feasibility_violations(p, c, a).empty());
    for (std::size_t i = 0; i < p.pc1.size(); ++i) {
      EXPECT_EQ(a.adv_pc1.positions(i, 1), p.pc1.positions(i, 1));
      if (mode == RandomMode::kRademacher) EXPECT_NEAR(std::abs(a.delta(i, 0)), 0.1, 1e-12);
    }
    EXPECT_EQ(a.adv_pc1.colors, p.pc1.colors);
  }
}

TEST(RunAttack, DispatchAndNone) {
  const ScenePair p = test_pair(60, false);
  const OtEstimator est;
  AttackConfig none = config(AttackKind::kNone, 0.1, 1);
  const AttackResult r = run_attack(p, est, none);
  EXPECT_EQ(r.adv_pc1, p.pc1);
  EXPECT_EQ(r.loss_before, r.loss_after);
  EXPECT_EQ(run_attack(p, est, config(AttackKind::kFgsm, 0.1, 1)), fgsm_sf(p, est, config(AttackKind::kFgsm, 0.1, 1)));
  EXPECT_EQ(parse_attack_kind("pgd"), AttackKind::kPgd);
  EXPECT_THROW(parse_attack_kind("cw"), ParseError);
  ScenePair no_gt = p;
  no_gt.gt_flow.reset();
  EXPECT_THROW(pgd_sf(no_gt, est, config(AttackKind::kPgd, 0.1, 2)), ContractError);
}

TEST(Feasibility, DetectsViolations) {
  const ScenePair p = test_pair(70, false, 4);
  const AttackConfig c = config(AttackKind::kFgsm, 0.1, 1, "dim=0");
  AttackResult r = fgsm_sf(p, OtEstimator(), c);
  EXPECT_TRUE(feasibility_violations(p, c, r).empty());
  r.delta(0, 1) = 0.01;
  EXPECT_FALSE(feasibility_violations(p, c, r).empty());
  r = fgsm_sf(p, OtEstimator(), c);
  r.adv_pc1.positions(0, 0) += 0.5;
  r.delta(0, 0) += 0.5;
  EXPECT_FALSE(feasibility_violations(p, c, r).empty());
}
