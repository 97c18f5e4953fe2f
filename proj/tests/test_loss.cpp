#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "patchdesc/loss.hpp"

using namespace patchdesc;

TEST(PairLoss, Examples) {
  const PairLossConfig cfg;  // margin 1
  EXPECT_DOUBLE_EQ(pair_loss(0.37, true, cfg), 0.37);
  EXPECT_DOUBLE_EQ(pair_loss(1.4, false, cfg), 0.0);
  EXPECT_DOUBLE_EQ(pair_loss(0.3, false, cfg), 0.7);
}

TEST(PairLoss, NegativeDistanceAndBadMarginThrow) {
  EXPECT_THROW(pair_loss(-0.1, true, {}), std::invalid_argument);
  EXPECT_THROW((PairLossConfig{0.0}.validate()), std::invalid_argument);
}

TEST(PairLoss, MonotonicityAndNonNegativity) {
  const PairLossConfig cfg{1.5};
  double prev_p = -1, prev_n = 1e9;
  for (int i = 0; i <= 400; ++i) {
    const double d = i * 0.01;
    const double lp = pair_loss(d, true, cfg), ln = pair_loss(d, false, cfg);
    EXPECT_GE(lp, 0);
    EXPECT_GE(ln, 0);
    EXPECT_GT(lp, prev_p);
    EXPECT_LE(ln, prev_n);
    prev_p = lp;
    prev_n = ln;
  }
}

TEST(PairLoss, NegativeLossOrderIsAscendingDistanceBelowMargin) {
  Rng rng(2);
  const PairLossConfig cfg;
  std::vector<double> d(200);
  for (auto& v : d) v = rng.uniform(0, 2);
  std::vector<std::size_t> by_loss(d.size()), by_dist(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) by_loss[i] = by_dist[i] = i;
  std::stable_sort(by_loss.begin(), by_loss.end(),
                   [&](auto a, auto b) { return pair_loss(d[a], false, cfg) > pair_loss(d[b], false, cfg); });
  std::stable_sort(by_dist.begin(), by_dist.end(), [&](auto a, auto b) { return d[a] < d[b]; });
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[by_dist[i]] >= 1.0) break;
    EXPECT_EQ(by_loss[i], by_dist[i]);
  }
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] >= 1.0) EXPECT_EQ(pair_loss(d[i], false, cfg), 0.0);
}

TEST(PairGrad, MatchesClosedForm) {
  Rng rng(3);
  const auto a = Tensor<double>::uniform({8}, rng, -0.2, 0.2), b = Tensor<double>::uniform({8}, rng, -0.2, 0.2);
  const double d = l2_distance(a, b);
  ASSERT_LT(d, 1.0);
  const auto gp = pair_descriptor_grad(a, b, true, {});
  const auto gn = pair_descriptor_grad(a, b, false, {});
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(gp[i], (a[i] - b[i]) / d, 1e-15);
    EXPECT_NEAR(gn[i], -(a[i] - b[i]) / d, 1e-15);
  }
}

TEST(PairGrad, CoincidentDescriptorsGiveZero) {
  const Tensor<double> a({4}, 0.25);
  for (const bool pos : {true, false}) {
    const auto g = pair_descriptor_grad(a, a, pos, {});
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(PairBackward, IdenticalPatchesPositiveGiveZeroLossAndGradient) {
  const auto state = build_network<double>(registry_spec("CNN2"), 1);
  Rng rng(4);
  const auto x = Tensor<double>::uniform({1, 64, 64}, rng, -1, 1);
  auto grads = zero_grads(state);
  const auto ev = pair_backward(state, x, x, true, {}, grads);
  EXPECT_EQ(ev.distance, 0.0);
  EXPECT_EQ(ev.loss, 0.0);
  for (const auto& g : grads)
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(PairBackward, InactiveHingeGivesZeroGradients) {
  const auto state = build_network<double>(registry_spec("CNN2"), 1);
  Rng rng(5);
  const auto x1 = Tensor<double>::uniform({1, 64, 64}, rng, -1, 1);
  const auto x2 = Tensor<double>::uniform({1, 64, 64}, rng, -1, 1);
  const double d = pair_forward(state, x1, x2, false, {}).distance;
  auto grads = zero_grads(state);
  const auto ev = pair_backward(state, x1, x2, false, PairLossConfig{d * 0.5}, grads);
  EXPECT_EQ(ev.loss, 0.0);
  for (const auto& g : grads)
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(PairBackward, SwappingBranchesLeavesLossAndGradientsUnchanged) {
  const auto state = build_network<double>(registry_spec("CNN3"), 2);
  Rng rng(6);
  const auto x1 = Tensor<double>::uniform({1, 64, 64}, rng, -1, 1);
  const auto x2 = Tensor<double>::uniform({1, 64, 64}, rng, -1, 1);
  for (const bool pos : {true, false}) {
    const PairLossConfig cfg{10.0};
    auto g12 = zero_grads(state), g21 = zero_grads(state);
    const auto e12 = pair_backward(state, x1, x2, pos, cfg, g12);
    const auto e21 = pair_backward(state, x2, x1, pos, cfg, g21);
    EXPECT_DOUBLE_EQ(e12.loss, e21.loss);
    for (std::size_t t = 0; t < g12.size(); ++t)
      for (std::size_t i = 0; i < g12[t].size(); ++i) EXPECT_NEAR(g12[t][i], g21[t][i], 1e-12);
  }
}

TEST(PairBackward, ScaleMultipliesGradients) {
  const auto state = build_network<double>(registry_spec("CNN2"), 3);
  Rng rng(7);
  const auto x1 = Tensor<double>::uniform({1, 64, 64}, rng, -1, 1);
  const auto x2 = Tensor<double>::uniform({1, 64, 64}, rng, -1, 1);
  auto g1 = zero_grads(state), g4 = zero_grads(state);
  pair_backward(state, x1, x2, true, {}, g1, 1.0);
  pair_backward(state, x1, x2, true, {}, g4, 0.25);
  for (std::size_t t = 0; t < g1.size(); ++t)
    for (std::size_t i = 0; i < g1[t].size(); ++i) EXPECT_NEAR(g4[t][i], 0.25 * g1[t][i], 1e-12);
}
