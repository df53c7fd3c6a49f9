// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "ghostforge/cost.hpp"

using namespace ghostforge;

namespace {

ArchSpec single_conv(bool bias) {
  ArchSpec a;
  a.name = "single";
  a.input = {1, 3, 32, 32};
  ConvConfig c;
  c.out = 16;
  c.bn = false;
  c.relu = false;
  c.bias = bias;
  a.nodes.push_back(Node{"conv", c, {kInputName}});
  return a;
}

}  // namespace

TEST(CostModel, SingleConv) {
  auto r = count_costs(single_conv(false));
  EXPECT_EQ(r.total.flops, 442368u);
  EXPECT_EQ(r.total.params, 432u);
  EXPECT_EQ(r.total.activations, 16u * 32 * 32);
  EXPECT_EQ(count_costs(single_conv(true)).total.params, 448u);
  // BN adds 2c parameters and no FLOPs.
  ArchSpec bn = single_conv(false);
  std::get<ConvConfig>(bn.nodes[0].config).bn = true;
  EXPECT_EQ(count_costs(bn).total.params, 464u);
  EXPECT_EQ(count_costs(bn).total.flops, 442368u);
}

TEST(CostModel, EmptyArch) {
  ArchSpec a;
  a.input = {1, 3, 8, 8};
  const auto r = count_costs(a);
  EXPECT_TRUE(r.rows.empty());
  EXPECT_EQ(r.total, CostTotals{});
}

TEST(CostModel, TotalsAreColumnSums) {
  for (const auto& n : zoo_names()) {
    const auto r = count_costs(build_arch(n));
    CostTotals sum;
    for (const auto& row : r.rows) sum += CostTotals{row.params, row.flops, row.activations, row.conv_weights};
    EXPECT_EQ(sum, r.total) << n;
  }
}

TEST(CostModel, ConvIdentityPerNode) {
  // flops / (h' w') == conv weights, for every stand-alone conv node.
  for (const ArchSpec& a : {build_vgg16_cifar(), c_ghostify(build_vgg16_cifar(), 1, 3), build_c_ghostnet(1.0)}) {
    const auto r = count_costs(a);
    for (std::size_t i = 0; i < a.nodes.size(); ++i) {
      if (!std::holds_alternative<ConvConfig>(a.nodes[i].config)) continue;
      const auto& row = r.rows[i];
      ASSERT_GT(row.conv_weights, 0u);
      EXPECT_EQ(row.flops, row.conv_weights * row.out_shape.h * row.out_shape.w) << row.name;
    }
  }
}

TEST(CostModel, ReorderInvariance) {
  ArchSpec a;
  a.input = {1, 3, 16, 16};
  ConvConfig c1, c2;
  c1.out = 8;
  c2.out = 4;
  c2.kernel = 5;
  a.nodes = {Node{"left", c1, {kInputName}}, Node{"right", c2, {kInputName}},
             Node{"cat", ConcatConfig{}, {"left", "right"}}, Node{"pool", GlobalAvgPoolConfig{}, {"cat"}},
             Node{"fc", FcConfig{10, true, false, false}, {"pool"}}};
  ArchSpec b = a;
  std::swap(b.nodes[0], b.nodes[1]);
  EXPECT_EQ(count_costs(a).total, count_costs(b).total);
  EXPECT_EQ(count_costs(a).row("left").flops, count_costs(b).row("left").flops);
}

TEST(CostModel, CsvAndTableRendering) {
  std::ostringstream csv, table;
  const auto r = count_costs(single_conv(true));
  write_cost_csv(csv, r);
  EXPECT_EQ(csv.str(), "name,kind,params,flops,activations,out_shape\nconv,conv,448,442368,16384,16x32x32\nTOTAL,,448,442368,16384,\n");
  write_cost_table(table, r);
  EXPECT_NE(table.str().find("multiply-accumulates"), std::string::npos);
  EXPECT_EQ(human_count(3663800000ULL), "3.66B");
  EXPECT_EQ(human_count(125748000ULL), "125.75M");
}

TEST(CostModel, GGhostifyReducesActivations) {
  // Default per-stage layout: strictly fewer activations on every zoo backbone.
  for (const auto& name : zoo_names()) {
    const ArchSpec base = name == "g_ghostnet" ? build_g_ghostnet(1.0, 224, 1000, 0.0) : build_arch(name);
    for (double l : {0.2, 0.4, 0.5})
      EXPECT_LT(count_costs(g_ghostify(base, GGhostOptions{l})).total.activations,
                count_costs(base).total.activations)
          << name << " " << l;
  }
  // A forced tail layout on 3-conv stages only breaks even: c + cc + cg + c = 3c.
  const ArchSpec vgg = build_vgg16_cifar();
  EXPECT_EQ(count_costs(g_ghostify(vgg, GGhostOptions{0.5, CheapKind::Conv1x1, true, StageLayout::Tail})).total.activations,
            count_costs(vgg).total.activations);
}

TEST(CostModel, ShapeTraceFailuresPropagate) {
  ArchSpec a = single_conv(false);
  ConvConfig wide;
  wide.out = 8;
  a.nodes.push_back(Node{"other", wide, {kInputName}});
  a.nodes.push_back(Node{"sum", AddConfig{}, {"conv", "other"}});
  EXPECT_THROW(count_costs(a), DimensionError);
  ArchSpec b = single_conv(false);
  auto& c = std::get<ConvConfig>(b.nodes[0].config);
  c.kernel = 5;
  c.padding = 0;
  EXPECT_THROW(count_costs(b, Shape{1, 3, 3, 3}), ConfigError);
}
