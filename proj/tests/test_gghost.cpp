// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "ghostforge/cost.hpp"
#include "gradcheck.hpp"

using namespace ghostforge;
using gf_test::random_tensor;

namespace {

std::vector<BlockConfig> basic_blocks(std::size_t n, std::size_t width, std::size_t first_stride = 1) {
  std::vector<BlockConfig> b;
  for (std::size_t i = 0; i < n; ++i) b.push_back(BasicBlockConfig{width, i == 0 ? first_stride : 1, {}});
  return b;
}

GGhostStageConfig stage_cfg(std::vector<BlockConfig> blocks, double lambda, bool mix, StageLayout layout,
                            CheapKind cheap = CheapKind::Conv1x1) {
  return GGhostStageConfig{std::move(blocks), lambda, cheap, mix, layout};
}

/// Plain chain of the same blocks, for comparison with a stage.
ArchSpec chain(const std::vector<BlockConfig>& blocks, const Shape& in) {
  ArchSpec a;
  a.name = "chain";
  a.input = in;
  std::string prev = kInputName;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string name = "b" + std::to_string(i + 1);
    a.nodes.push_back(Node{name, to_node_config(blocks[i]), {prev}});
    prev = name;
  }
  return a;
}

}  // namespace

TEST(GGhostStage, Widths) {
  GGhostStage<float> st(stage_cfg(basic_blocks(3, 80), 0.4, true, StageLayout::Literal), {1, 40, 8, 8});
  EXPECT_EQ(st.complicated_channels(), 48u);
  EXPECT_EQ(st.ghost_channels(), 32u);
  for (std::size_t c : {1u, 3u, 7u, 16u, 63u, 64u, 160u})
    for (double l : {0.0, 0.1, 0.25, 0.4, 0.5, 0.9}) {
      const std::size_t cc = complicated_width(c, l);
      EXPECT_LE(cc, c);
      EXPECT_NEAR(static_cast<double>(cc), (1 - l) * c, 0.5 + 1e-9);
    }
  EXPECT_EQ(complicated_width(5, 0.5), 3u);  // ties toward the complicated path
  EXPECT_THROW(complicated_width(8, 1.0), ConfigError);
  EXPECT_THROW(GGhostStage<float>(stage_cfg(basic_blocks(2, 1), 0.9, false, StageLayout::Literal), {1, 1, 4, 4}),
               ConfigError);
  EXPECT_THROW(GGhostStage<float>(stage_cfg(basic_blocks(3, 8), 0.5, false, StageLayout::Literal, CheapKind::None),
                                  {1, 8, 4, 4}),
               ConfigError);
}

TEST(GGhostStage, LambdaZeroIsVanillaBitExact) {
  const Shape in{1, 4, 6, 6};
  const auto blocks = basic_blocks(4, 8, 2);
  const auto x = random_tensor({2, 4, 6, 6}, 1);
  const auto g = random_tensor({2, 8, 3, 3}, 2);
  for (StageLayout layout : {StageLayout::Tail, StageLayout::Literal})
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      GGhostStage<double> st(stage_cfg(blocks, 0.0, true, layout), in);
      Network<double> ref(chain(blocks, in));
      init_parameters(st, 7);
      ref.init(7);
      EXPECT_EQ(st.forward(x, mode), ref.forward(x, mode));
      EXPECT_EQ(st.backward(g), ref.backward(g));
      EXPECT_EQ(st.cost(), ref.cost());
    }
}

TEST(GGhostStage, IdentityCheapGivesReluSliceOfFirstBlock) {
  const Shape in{1, 6, 5, 5};
  GGhostStage<double> st(stage_cfg(basic_blocks(2, 6), 0.5, false, StageLayout::Literal), in);
  init_parameters(st, 3);
  gf_test::set_bn_identity(st);
  auto& w = st.cheap()->conv().weight();
  w.fill(0.0);
  for (std::size_t o = 0; o < 3; ++o) w(o, o, 0, 0) = 1.0;
  const auto x = random_tensor({2, 6, 5, 5}, 4);
  const auto y = st.forward(x, Mode::Eval);
  const auto y1 = relu(st.first().forward(x, Mode::Eval));
  EXPECT_EQ(slice_channels(y, 3, 3), slice_channels(y1, 0, 3));

  GGhostStage<double> id(stage_cfg(basic_blocks(2, 6), 0.5, false, StageLayout::Literal, CheapKind::Identity), in);
  init_parameters(id, 3);
  const auto yi = id.forward(x, Mode::Eval);
  EXPECT_EQ(slice_channels(yi, 3, 3), slice_channels(relu(id.first().forward(x, Mode::Eval)), 3, 3));
}

TEST(GGhostStage, ZeroMixEqualsMixOffBitExact) {
  const Shape in{1, 4, 6, 6};
  const auto x = random_tensor({2, 4, 6, 6}, 5);
  const auto g = random_tensor({2, 8, 6, 6}, 6);
  for (StageLayout layout : {StageLayout::Tail, StageLayout::Literal}) {
    GGhostStage<double> on(stage_cfg(basic_blocks(4, 8), 0.5, true, layout), in);
    GGhostStage<double> off(stage_cfg(basic_blocks(4, 8), 0.5, false, layout), in);
    init_parameters(on, 8);
    init_parameters(off, 8);
    on.mix()->weight().fill(0.0);
    std::fill(on.mix()->bias().begin(), on.mix()->bias().end(), 0.0);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      EXPECT_EQ(on.forward(x, mode), off.forward(x, mode));
      EXPECT_EQ(on.backward(g), off.backward(g));
    }
  }
}

TEST(Mix, AffineAndBruteForce) {
  Mix<double> mix(6, 3);
  GaussianStream rng(9);
  for (auto& v : mix.weight().vec()) v = rng.next();
  for (auto& v : mix.bias()) v = rng.next();
  auto run = [&](const Tensor<double>& a, const Tensor<double>& b) {
    const Tensor<double>* parts[] = {&a, &b};
    return mix.forward(std::span<const Tensor<double>* const>(parts));
  };
  const Tensor<double> zero(2, 3, 4, 4);
  const auto tau0 = run(zero, zero);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(tau0(n, j, 0, 0), mix.bias()[j]);

  const auto a1 = random_tensor({2, 3, 4, 4}, 10), b1 = random_tensor({2, 3, 4, 4}, 11);
  const auto a2 = random_tensor({2, 3, 4, 4}, 12), b2 = random_tensor({2, 3, 4, 4}, 13);
  Tensor<double> a12 = a1, b12 = b1;
  a12 += a2;
  b12 += b2;
  const auto t1 = run(a1, b1), t2 = run(a2, b2), t12 = run(a12, b12);
  for (std::size_t i = 0; i < t12.size(); ++i) EXPECT_NEAR(t12[i] - tau0[i], (t1[i] - tau0[i]) + (t2[i] - tau0[i]), 1e-10);

  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < 3; ++j) {
      double t = mix.bias()[j];
      for (std::size_t c = 0; c < 6; ++c) {
        const Tensor<double>& src = c < 3 ? a1 : b1;
        double m = 0;
        for (std::size_t i = 0; i < 16; ++i) m += src.plane(n, c % 3)[i];
        t += mix.weight()(j, c, 0, 0) * m / 16.0;
      }
      EXPECT_NEAR(t1(n, j, 0, 0), t, 1e-10);
    }
  const Tensor<double> narrow(2, 2, 4, 4);
  const Tensor<double>* bad[] = {&narrow, &a1};
  EXPECT_THROW(mix.forward(std::span<const Tensor<double>* const>(bad)), DimensionError);
}

TEST(GGhostGradients, StageWithMix) {
  struct Case {
    std::vector<BlockConfig> blocks;
    Shape in;
    StageLayout layout;
    CheapKind cheap;
  };
  ConvConfig cv;
  cv.out = 4;
  const std::vector<Case> cases = {
      {{cv, cv, cv}, {2, 3, 4, 4}, StageLayout::Literal, CheapKind::Conv1x1},
      {{cv, cv, cv}, {2, 3, 4, 4}, StageLayout::Tail, CheapKind::Conv1x1},
      {basic_blocks(3, 2, 2), {2, 2, 6, 6}, StageLayout::Literal, CheapKind::Conv3x3},
      {basic_blocks(3, 2), {2, 2, 4, 4}, StageLayout::Tail, CheapKind::Identity},
  };
  std::uint64_t seed = 300;
  for (const auto& c : cases) {
    GGhostStage<double> st(stage_cfg(c.blocks, 0.5, true, c.layout, c.cheap), {1, c.in.c, c.in.h, c.in.w});
    ASSERT_NE(st.mix(), nullptr);
    gf_test::randomize_params(st, seed++);
    const auto x = random_tensor(c.in, seed++);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      const auto r = gf_test::grad_check(st, x, mode, seed++);
      EXPECT_LE(r.params, 500u);
      EXPECT_LT(r.max_rel_error, 1e-6) << to_string(c.layout) << " worst " << r.worst;
    }
  }
}

TEST(StageReductionRatios, Examples) {
  const std::vector<double> f(9, 1.0);
  auto r = stage_reduction_ratios(f, f, 0.5, 0.0, 0.0);
  EXPECT_NEAR(r.flops, 9.0 / (1 + 0.5 + 7 * 0.25), 1e-12);
  EXPECT_NEAR(r.flops, 2.769, 1e-3);
  r = stage_reduction_ratios({3, 5, 7}, {1, 2, 3}, 0.0, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(r.flops, 1.0);
  EXPECT_DOUBLE_EQ(r.params, 1.0);
  EXPECT_THROW(stage_reduction_ratios({1, -1}, {1, 1}, 0.5, 0, 0), ConfigError);
  EXPECT_THROW(stage_reduction_ratios({}, {}, 0.5, 0, 0), ConfigError);
  EXPECT_THROW(stage_reduction_ratios({1}, {1}, -0.1, 0, 0), ConfigError);
}

// Counted stage costs against the closed form, fed with counted per-block
// costs of the vanilla stage. The closed form ignores the width change of the
// second block's shortcut and input, so agreement is within a few percent.
TEST(StageReductionRatios, CostModelCrossCheck) {
  struct Case {
    std::vector<BlockConfig> blocks;
    Shape in;
    double tol;
  };
  ConvConfig cv;
  cv.out = 64;
  const std::vector<Case> cases = {
      {std::vector<BlockConfig>(6, cv), {1, 64, 16, 16}, 0.02},
      {basic_blocks(9, 64, 2), {1, 32, 16, 16}, 0.05},
  };
  for (const auto& c : cases) {
    const ArchSpec vanilla = chain(c.blocks, c.in);
    const auto rep = count_costs(vanilla);
    std::vector<double> f, p;
    for (const auto& row : rep.rows) {
      f.push_back(static_cast<double>(row.flops));
      p.push_back(static_cast<double>(row.params));
    }
    GGhostStage<float> st(stage_cfg(c.blocks, 0.5, false, StageLayout::Literal), c.in);
    const auto cheap = st.cheap()->cost();
    const auto r = stage_reduction_ratios(f, p, 0.5, static_cast<double>(cheap.flops), static_cast<double>(cheap.params));
    const double measured_f = static_cast<double>(rep.total.flops) / static_cast<double>(st.cost().flops);
    const double measured_p = static_cast<double>(rep.total.params) / static_cast<double>(st.cost().params);
    EXPECT_NEAR(measured_f / r.flops, 1.0, c.tol);
    EXPECT_NEAR(measured_p / r.params, 1.0, c.tol);
  }
}

TEST(GGhostStage, ActivationsDrop) {
  ConvConfig cv;
  cv.out = 16;
  const Shape in{1, 16, 8, 8};
  for (double lambda : {0.1, 0.25, 0.5, 0.75})
    for (std::size_t n : {3u, 5u}) {
      // Residual blocks under the tail layout.
      const auto blocks = basic_blocks(n, 16);
      GGhostStage<float> tail(stage_cfg(blocks, lambda, true, StageLayout::Tail), in);
      EXPECT_LT(tail.cost().activations, Network<float>(chain(blocks, in)).cost().activations) << lambda << " " << n;
      // Plain convs under the literal layout.
      const std::vector<BlockConfig> convs(n, cv);
      GGhostStage<float> lit(stage_cfg(convs, lambda, true, StageLayout::Literal), in);
      EXPECT_LT(lit.cost().activations, Network<float>(chain(convs, in)).cost().activations) << lambda << " " << n;
    }
  // Literal residual stages pay for block 2's c -> cc projection shortcut, which
  // outweighs the saving at small lambda.
  const auto blocks = basic_blocks(3, 16);
  GGhostStage<float> lit(stage_cfg(blocks, 0.1, true, StageLayout::Literal), in);
  EXPECT_GT(lit.cost().activations, Network<float>(chain(blocks, in)).cost().activations);
}
