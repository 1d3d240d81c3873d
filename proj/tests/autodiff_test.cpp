#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "sfattack/autodiff.hpp"
#include "sfattack/gradcheck.hpp"

namespace ad = sfattack::ad;
using sfattack::Tensor;

namespace {

Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros({r, c});
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Independent of the implementation: plain double loop.
Tensor sqdist_oracle(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros({a.rows(), b.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
      out(i, j) = s;
    }
  return out;
}

}  // namespace

TEST(Primitives, ElementwiseAndMatmul) {
  ad::Graph g;
  auto a = g.constant(Tensor({2}, {1, 2}));
  auto b = g.constant(Tensor({2}, {3, 4}));
  EXPECT_EQ(ad::add(a, b).value(), Tensor({2}, {4, 6}));
  EXPECT_EQ(ad::exp(g.constant(Tensor({1}, {0}))).value(), Tensor({1}, {1}));

  auto eye = g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  auto m = g.constant(Tensor::matrix(2, 2, {0.3, -2, 5, 7.25}));
  EXPECT_EQ(ad::matmul(eye, m).value(), m.value());
}

TEST(Primitives, ShapeAndDomainErrors) {
  ad::Graph g;
  auto a = g.constant(Tensor({2}, {1, 2}));
  auto b = g.constant(Tensor({3}, {1, 2, 3}));
  EXPECT_THROW(ad::add(a, b), sfattack::DimensionError);
  EXPECT_THROW(ad::log(g.constant(Tensor({1}, {-1}))), sfattack::DomainError);
  EXPECT_THROW(ad::sqrt(g.constant(Tensor({1}, {-1e-3}))), sfattack::DomainError);
  EXPECT_THROW(ad::matmul(g.constant(Tensor::zeros({2, 3})), g.constant(Tensor::zeros({2, 3}))),
               sfattack::DimensionError);
  EXPECT_THROW(ad::pairwise_sqdist(g.constant(Tensor::zeros({2, 3})), g.constant(Tensor::zeros({2, 2}))),
               sfattack::DimensionError);
  EXPECT_THROW(ad::broadcast(g.constant(Tensor::zeros({2, 3})), {4, 3}), sfattack::DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), sfattack::DimensionError);
}

TEST(PairwiseSqDist, SmallCases) {
  ad::Graph g;
  auto a = g.constant(Tensor::matrix(2, 3, {0, 0, 0, 1, 0, 0}));
  auto b = g.constant(Tensor::matrix(1, 3, {1, 0, 0}));
  EXPECT_EQ(ad::pairwise_sqdist(a, b).value(), Tensor::matrix(2, 1, {1, 0}));

  std::mt19937_64 rng(3);
  auto x = g.constant(random_matrix(rng, 5, 3));
  const Tensor d = ad::pairwise_sqdist(x, x).value();
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(d(i, i), 0.0);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(d(i, j), d(j, i));
  }
}

TEST(PairwiseSqDist, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    ad::Graph g;
    const Tensor a = random_matrix(rng, 4, 3, -5, 5);
    const Tensor b = random_matrix(rng, 5, 3, -5, 5);
    const Tensor got = ad::pairwise_sqdist(g.constant(a), g.constant(b)).value();
    const Tensor want = sqdist_oracle(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Backward, AnalyticGradients) {
  {
    ad::Graph g;
    auto x = g.leaf(Tensor({2}, {1, 2}));
    auto grads = g.backward(ad::sum(ad::mul(x, x)));
    EXPECT_EQ(grads[x], Tensor({2}, {2, 4}));
  }
  {
    ad::Graph g;
    auto x = g.leaf(Tensor::matrix(1, 3, {3, 4, 0}));
    auto zero = g.constant(Tensor::zeros({1, 3}));
    auto grads = g.backward(ad::mean(ad::row_norm(ad::sub(x, zero))));
    EXPECT_NEAR(grads[x][0], 0.6, 1e-15);
    EXPECT_NEAR(grads[x][1], 0.8, 1e-15);
    EXPECT_EQ(grads[x][2], 0.0);
  }
}

TEST(Backward, RequiresScalarRootAndSingleUse) {
  ad::Graph g;
  auto x = g.leaf(Tensor({2}, {1, 2}));
  EXPECT_THROW(g.backward(ad::mul(x, x)), sfattack::ContractError);
  ad::Graph h;
  auto y = h.leaf(Tensor({2}, {1, 2}));
  auto root = ad::sum(y);
  h.backward(root);
  EXPECT_THROW(h.backward(root), sfattack::ContractError);
}

TEST(Backward, SubgradientsAtZero) {
  ad::Graph g;
  auto x = g.leaf(Tensor::matrix(2, 3, {0, 0, 0, 0, 1, -1}));
  auto grads = g.backward(ad::add(ad::sum(ad::row_norm(x)), ad::sum(ad::relu(x))));
  const Tensor& gx = grads[x];
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(gx(0, c), 0.0);  // zero row: norm and relu both give 0
  EXPECT_EQ(gx(1, 0), 0.0);
  EXPECT_NEAR(gx(1, 1), 1.0 + 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(gx(1, 2), -1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_TRUE(gx.all_finite());
}

TEST(Backward, UnreachedLeafGetsZeros) {
  ad::Graph g;
  auto x = g.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  auto y = g.leaf(Tensor({3}, {1, 1, 1}));
  auto grads = g.backward(ad::sum(x));
  EXPECT_EQ(grads[y], Tensor::zeros({3}));
}

// A composite touching every primitive; the scalar is a smooth function of
// the two leaves away from relu kinks.
ad::Var composite(ad::Graph& g, std::span<const ad::Var> v) {
  ad::Var a = v[0];  // 4 x 3
  ad::Var b = v[1];  // 5 x 3
  ad::Var d = ad::pairwise_sqdist(a, b);                        // 4 x 5
  ad::Var k = ad::exp(ad::scale(d, -0.5));                      // 4 x 5
  ad::Var rs = ad::row_sum(k);                                  // 4 x 1
  ad::Var p = ad::mul(k, ad::repeat_cols(ad::reciprocal(rs), 5));
  ad::Var bary = ad::matmul(p, b);                              // 4 x 3
  ad::Var flow = ad::sub(bary, a);
  ad::Var norms = ad::row_norm(flow);                           // 4 x 1
  const std::size_t idx[] = {2, 0, 2};
  ad::Var gathered = ad::gather_rows(a, idx);                   // 3 x 3
  ad::Var stacked = ad::concat(gathered, ad::relu(ad::gather_rows(b, idx)), 0);  // 6 x 3
  ad::Var wide = ad::concat(stacked, stacked, 1);               // 6 x 6
  ad::Var row = ad::col_sum(wide);                              // 1 x 6
  ad::Var tiled = ad::add_row(ad::mul(wide, wide), row);
  ad::Var s1 = ad::mean(ad::sqrt(ad::add(tiled, ad::broadcast(g.constant(Tensor::scalar(4.0)), tiled.shape()))));
  ad::Var s2 = ad::sum(ad::log(ad::add(norms, g.constant(Tensor::filled({4, 1}, 1.0)))));
  return ad::add(s1, s2);
}

TEST(Backward, RandomCompositeGraphsMatchFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> leaves{random_matrix(rng, 4, 3), random_matrix(rng, 5, 3)};
    const auto report = ad::gradcheck(leaves, composite, {1e-5, 1e-5, 1e-4});
    EXPECT_LT(report.max_rel_err, 1e-5) << "trial " << trial;
    EXPECT_EQ(report.coordinates, 27u);
  }
}

TEST(Backward, Linearity) {
  std::mt19937_64 rng(5);
  const Tensor a0 = random_matrix(rng, 4, 3), b0 = random_matrix(rng, 5, 3);
  auto grads_of = [&](double wa, double wb) {
    ad::Graph g;
    auto a = g.leaf(a0);
    auto b = g.leaf(b0);
    const ad::Var v[] = {a, b};
    ad::Var f = composite(g, v);
    ad::Var h = ad::sum(ad::pairwise_sqdist(a, b));
    auto grads = g.backward(ad::add(ad::scale(f, wa), ad::scale(h, wb)));
    return std::pair{grads[a], grads[b]};
  };
  const auto [fa, fb] = grads_of(1.0, 0.0);
  const auto [ha, hb] = grads_of(0.0, 1.0);
  const auto [ca, cb] = grads_of(2.5, -0.75);
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_NEAR(ca[i], 2.5 * fa[i] - 0.75 * ha[i], 1e-12);
  for (std::size_t i = 0; i < cb.size(); ++i) EXPECT_NEAR(cb[i], 2.5 * fb[i] - 0.75 * hb[i], 1e-12);
}

TEST(Backward, Deterministic) {
  std::mt19937_64 rng(9);
  const std::vector<Tensor> leaves{random_matrix(rng, 4, 3), random_matrix(rng, 5, 3)};
  auto run = [&] {
    ad::Graph g;
    std::vector<ad::Var> v{g.leaf(leaves[0]), g.leaf(leaves[1])};
    ad::Var root = composite(g, v);
    const double value = root.value().item();
    auto grads = g.backward(root);
    return std::tuple{value, grads[v[0]], grads[v[1]]};
  };
  EXPECT_EQ(run(), run());
}

TEST(Gradcheck, ConstantRecipeHasZeroError) {
  const ad::GraphRecipe recipe{
      [](std::uint64_t) { return std::vector<Tensor>{Tensor::matrix(2, 2, {1, 2, 3, 4})}; },
      [](ad::Graph& g, std::span<const ad::Var>) { return g.constant(Tensor::scalar(3.0)); }};
  const auto r = ad::gradcheck(recipe, 1);
  EXPECT_EQ(r.max_rel_err, 0.0);
  EXPECT_TRUE(r.pass);
}

TEST(Gradcheck, SameSeedSameReport) {
  const ad::GraphRecipe recipe{[](std::uint64_t seed) {
                                 std::mt19937_64 rng(seed);
                                 return std::vector<Tensor>{random_matrix(rng, 4, 3), random_matrix(rng, 5, 3)};
                               },
                               composite};
  const auto a = ad::gradcheck(recipe, 77);
  const auto b = ad::gradcheck(recipe, 77);
  EXPECT_EQ(a.max_rel_err, b.max_rel_err);
  EXPECT_EQ(a.pass, b.pass);
}

TEST(Gradcheck, NonFiniteForwardIsDomainError) {
  const auto build = [](ad::Graph& g, std::span<const ad::Var> v) {
    return ad::sum(ad::scale(v[0], std::numeric_limits<double>::infinity()));
  };
  EXPECT_THROW(ad::gradcheck({Tensor({1}, {1.0})}, build), sfattack::DomainError);
}

TEST(Gradcheck, DetectsWrongGradient) {
  // relu kink straddled by the finite difference: analytic and numeric differ.
  const auto build = [](ad::Graph&, std::span<const ad::Var> v) { return ad::sum(ad::relu(v[0])); };
  const auto r = ad::gradcheck({Tensor({1}, {0.0})}, build);
  EXPECT_FALSE(r.pass);
}
