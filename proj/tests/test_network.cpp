#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>

#include "patchdesc/network.hpp"

using namespace patchdesc;

TEST(Registry, EverySpecBuildsWithExactShapes) {
  for (const auto& name : registry_names()) {
    const auto spec = registry_spec(name);
    const auto state = build_network<float>(spec, 1);
    Rng rng(2);
    const auto d = describe(state, Tensor<float>::uniform({1, 64, 64}, rng, -1, 1));
    EXPECT_EQ(d.size(), 128u) << name;
    EXPECT_EQ(output_dim(spec), 128u) << name;
    // Every conv output and pool division is exact; the trace ends at the
    // flattened spatial extent.
    const auto trace = spatial_trace(spec);
    ASSERT_EQ(trace.size(), 1 + 2 * spec.conv.size()) << name;
    for (std::size_t i = 0; i < spec.conv.size(); ++i) {
      EXPECT_EQ(trace[2 * i + 1], trace[2 * i] - spec.conv[i].kernel + 1) << name;
      EXPECT_EQ(trace[2 * i + 1] % spec.conv[i].pool, 0u) << name;
      EXPECT_EQ(trace[2 * i + 2], trace[2 * i + 1] / spec.conv[i].pool) << name;
    }
  }
}

TEST(Registry, ThirtyTwoDimensionalVariant) {
  const auto state = build_network<float>(registry_spec("CNN3_NN1", 32), 1);
  EXPECT_EQ(describe(state, Tensor<float>({1, 64, 64}, 0.1f)).size(), 32u);
}

TEST(Registry, Cnn3SpatialTrace) {
  EXPECT_EQ(spatial_trace(registry_spec("CNN3")), (std::vector<std::size_t>{64, 58, 29, 24, 8, 4, 1}));
}

TEST(Registry, Cnn2SpatialTrace) {
  EXPECT_EQ(spatial_trace(registry_spec("CNN2")), (std::vector<std::size_t>{64, 60, 15, 11, 1}));
}

TEST(Registry, Cnn2bSpatialTraceAndFlatten) {
  const auto spec = registry_spec("CNN2b_NN1");
  EXPECT_EQ(spatial_trace(spec), (std::vector<std::size_t>{64, 56, 14, 10, 2}));
  const auto state = build_network<float>(spec, 1);
  const auto& fc = std::get<FcLayer<float>>(state.layers[state.layers.size() - 2]);
  EXPECT_EQ(fc.n_in, 256u);
  EXPECT_EQ(fc.n_out, 128u);
}

TEST(Registry, UnknownNameThrows) { EXPECT_THROW(registry_spec("CNN4"), std::invalid_argument); }

TEST(Registry, SpecNeedingPaddingIsRejected) {
  auto spec = registry_spec("CNN3");
  spec.conv[2].kernel = 6;  // 8 -> 3, not divisible by 4
  EXPECT_THROW(build_network<float>(spec, 1), ShapeError);
  auto big = registry_spec("CNN3");
  big.conv[0].kernel = 70;
  EXPECT_THROW(build_network<float>(big, 1), ShapeError);
}

TEST(Build, FirstLayerDenseLaterLayersSparse) {
  const auto state = build_network<float>(registry_spec("CNN3"), 4);
  std::vector<const ConvLayer<float>*> convs;
  for (const auto& l : state.layers)
    if (auto* c = std::get_if<ConvLayer<float>>(&l)) convs.push_back(c);
  ASSERT_EQ(convs.size(), 3u);
  EXPECT_TRUE(convs[0]->dense());
  EXPECT_EQ(convs[1]->fan_in(), 16u);
  EXPECT_EQ(convs[2]->fan_in(), 32u);
  for (const auto* c : convs) EXPECT_NO_THROW(c->validate());
}

TEST(Build, InitializationBoundsAndZeroBias) {
  const auto state = build_network<double>(registry_spec("CNN3_NN1"), 5);
  for (const auto& l : state.layers) {
    if (auto* c = std::get_if<ConvLayer<double>>(&l)) {
      const double bound = 1.0 / std::sqrt(double(c->fan_in() * c->kernel * c->kernel));
      for (double w : c->weights.values()) EXPECT_LE(std::abs(w), bound);
      for (double b : c->bias.values()) EXPECT_EQ(b, 0.0);
    } else if (auto* f = std::get_if<FcLayer<double>>(&l)) {
      const double bound = 1.0 / std::sqrt(double(f->n_in));
      for (double w : f->weights.values()) EXPECT_LE(std::abs(w), bound);
      for (double b : f->bias.values()) EXPECT_EQ(b, 0.0);
    }
  }
}

TEST(Build, SameSeedSameNetworkDifferentSeedDifferent) {
  const auto a = build_network<float>(registry_spec("CNN3"), 9);
  const auto b = build_network<float>(registry_spec("CNN3"), 9);
  const auto c = build_network<float>(registry_spec("CNN3"), 10);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
  EXPECT_FALSE(*pa[0] == *pc[0]);
}

TEST(Build, NormalizationOmittedAtOneByOne) {
  const auto state = build_network<float>(registry_spec("CNN3"), 1);
  std::size_t norms = 0;
  for (const auto& l : state.layers) norms += std::holds_alternative<NormSpec>(l);
  EXPECT_EQ(norms, 2u);
}

TEST(Build, ReluModeKeepsFinalTanh) {
  auto spec = registry_spec("CNN3");
  spec.unit = Unit::ReLU;
  const auto state = build_network<float>(spec, 1);
  std::vector<Unit> units;
  for (const auto& l : state.layers)
    if (auto* a = std::get_if<ActivationLayer>(&l)) units.push_back(a->unit);
  EXPECT_EQ(units, (std::vector<Unit>{Unit::ReLU, Unit::ReLU, Unit::Tanh}));

  auto fc_spec = registry_spec("CNN3_NN1");
  fc_spec.unit = Unit::ReLU;
  units.clear();
  for (const auto& l : build_network<float>(fc_spec, 1).layers)
    if (auto* a = std::get_if<ActivationLayer>(&l)) units.push_back(a->unit);
  EXPECT_EQ(units, (std::vector<Unit>{Unit::ReLU, Unit::ReLU, Unit::ReLU, Unit::Tanh}));
}

TEST(Describe, ZeroWeightsGiveZeroVector) {
  auto state = build_network<float>(registry_spec("CNN3"), 1);
  for (auto* p : state.parameters()) p->fill(0.0f);
  Rng rng(3);
  const auto d = describe(state, Tensor<float>::uniform({1, 64, 64}, rng, -1, 1));
  for (float v : d.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Describe, DeterministicAndPure) {
  const auto state = build_network<float>(registry_spec("CNN3"), 1);
  Rng rng(4);
  const auto x = Tensor<float>::uniform({1, 64, 64}, rng, -1, 1);
  EXPECT_EQ(describe(state, x), describe(state, x));
  EXPECT_EQ(describe(state, x), forward(state, x).output());
}

TEST(Describe, WrongInputShapeThrows) {
  const auto state = build_network<float>(registry_spec("CNN3"), 1);
  EXPECT_THROW(describe(state, Tensor<float>({1, 32, 32})), ShapeError);
  EXPECT_THROW(describe(state, Tensor<float>({2, 64, 64})), ShapeError);
}

// Oracle: compose the layer-module forwards by hand in the documented order.
TEST(Describe, Cnn3EqualsHandComposedLayers) {
  const auto state = build_network<double>(registry_spec("CNN3"), 6);
  std::vector<const ConvLayer<double>*> convs;
  for (const auto& l : state.layers)
    if (auto* c = std::get_if<ConvLayer<double>>(&l)) convs.push_back(c);
  Rng rng(7);
  const auto x = Tensor<double>::uniform({1, 64, 64}, rng, -1, 1);
  const auto norm = NormSpec::gaussian(1.0);
  auto h = subnorm_forward(norm, pool_forward(PoolSpec{2, PoolMode::L2}, tanh_forward(conv_forward(*convs[0], x))));
  h = subnorm_forward(norm, pool_forward(PoolSpec{3, PoolMode::L2}, tanh_forward(conv_forward(*convs[1], h))));
  h = pool_forward(PoolSpec{4, PoolMode::L2}, tanh_forward(conv_forward(*convs[2], h)));
  EXPECT_EQ(describe(state, x), h.flattened());
}

// Parameter totals under the default connectivity, printed next to the
// published figures (informational).
TEST(ParamCount, RegistryTotals) {
  const std::vector<std::pair<std::string, std::size_t>> published = {
      {"CNN1_NN1", 68352}, {"CNN2", 27776}, {"CNN2a_NN1", 145088}, {"CNN2b_NN1", 48576},
      {"CNN3_NN1", 62784}, {"CNN3", 46272}, {"CNN3_WIDE", 110496}};
  for (const auto& [name, table] : published) {
    const auto spec = registry_spec(name);
    const auto state = build_network<float>(spec, 1);
    // Independent arithmetic: filters * fan_in * k^2 + filters per stage.
    std::size_t expect = 0, n_in = 1;
    const auto trace = spatial_trace(spec);
    for (std::size_t i = 0; i < spec.conv.size(); ++i) {
      const auto& st = spec.conv[i];
      const std::size_t fan = i == 0 ? 1 : (st.fan_in ? st.fan_in : (n_in + 1) / 2);
      expect += st.filters * fan * st.kernel * st.kernel + st.filters;
      n_in = st.filters;
    }
    if (spec.fc_outputs) expect += spec.fc_outputs * n_in * trace.back() * trace.back() + spec.fc_outputs;
    EXPECT_EQ(param_count(state), expect) << name;
    std::printf("%-10s params %7zu  published %7zu\n", name.c_str(), param_count(state), table);
  }
}

TEST(ParamCount, DenseCnn1Nn1Arithmetic) {
  // 32*81+32 + 128*(32*4*4)+128
  EXPECT_EQ(param_count(build_network<float>(registry_spec("CNN1_NN1"), 1)), 68288u);
}
