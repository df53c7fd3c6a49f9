// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <optional>

#include "ghostforge/cost.hpp"

using namespace ghostforge;

namespace {

std::vector<ArchSpec> zoo_and_conversions() {
  std::vector<ArchSpec> out;
  for (const auto& n : zoo_names()) out.push_back(build_arch(n));
  out.push_back(build_c_ghostnet(0.5, 32, 10));
  out.push_back(c_ghostify(build_vgg16_cifar(), 2, 3));
  out.push_back(g_ghostify(build_resnet(56), {}));
  out.push_back(g_ghostify(build_resnet(34), GGhostOptions{0.4, CheapKind::Conv3x3, false, StageLayout::Literal}));
  out.push_back(c_ghostify(g_ghostify(build_resnet(56), {}), 3, 5));
  return out;
}

}  // namespace

TEST(ArchJson, RoundTripIsIdentity) {
  for (const auto& a : zoo_and_conversions()) {
    const json j = to_json(a);
    const ArchSpec back = arch_from_json(j);
    EXPECT_EQ(to_json(back), j) << a.name;
    EXPECT_EQ(back.input, a.input);
    ASSERT_EQ(back.nodes.size(), a.nodes.size());
    for (std::size_t i = 0; i < a.nodes.size(); ++i) {
      EXPECT_EQ(back.nodes[i].name, a.nodes[i].name);
      EXPECT_TRUE(back.nodes[i].config == a.nodes[i].config) << a.nodes[i].name;
      EXPECT_EQ(back.nodes[i].inputs, a.nodes[i].inputs);
    }
  }
}

TEST(ArchJson, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "ghostforge_arch_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "r56.json").string();
  const ArchSpec a = g_ghostify(build_resnet(56), {});
  save_arch(a, path);
  EXPECT_EQ(to_json(load_arch(path)), to_json(a));
  EXPECT_THROW(load_arch((dir / "missing.json").string()), IoError);
}

TEST(ArchJson, RejectsUnknownKindNamingTheNode) {
  json j = to_json(build_resnet(56));
  j["nodes"][3]["kind"] = "wavelet_block";
  try {
    arch_from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stage1_block3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("wavelet_block"), std::string::npos) << e.what();
  }
  json k = to_json(build_resnet(56));
  k["nodes"][2]["config"]["strde"] = 2;
  try {
    arch_from_json(k);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("stage1_block2"), std::string::npos) << e.what();
  }
  json m = to_json(build_resnet(56));
  m["nodes"][1]["inputs"] = json::array({"stage9_block9"});
  EXPECT_THROW(arch_from_json(m), ConfigError);
  json n = to_json(build_resnet(56));
  n.erase("input_shape");
  EXPECT_THROW(arch_from_json(n), ConfigError);
}

TEST(ArchSpec, ValidationRules) {
  ArchSpec a;
  a.input = {1, 3, 8, 8};
  ConvConfig c;
  c.out = 4;
  a.nodes = {Node{"a", c, {kInputName}}, Node{"a", c, {"a"}}};
  EXPECT_THROW(a.validate(), ConfigError);
  a.nodes = {Node{"a", c, {"b"}}, Node{"b", c, {kInputName}}};
  EXPECT_THROW(a.validate(), ConfigError);
  a.nodes = {Node{"a", c, {kInputName}}, Node{"b", c, {kInputName}}};
  EXPECT_THROW(a.validate(), ConfigError);
  a.nodes = {Node{"a", c, {kInputName}}, Node{"b", c, {kInputName}}, Node{"cat", ConcatConfig{}, {"a", "b"}}};
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(trace_shapes(a, a.input).back(), (Shape{1, 8, 8, 8}));
  a.nodes = {Node{"a", c, {kInputName}}, Node{"b", c, {"a", "a"}}};
  EXPECT_THROW(a.validate(), ConfigError);
  EXPECT_THROW(build_resnet(18), ConfigError);
  EXPECT_THROW(build_arch("mobilenet"), ConfigError);
}

TEST(Builders, CGhostNetTableShapes) {
  const ArchSpec a = build_c_ghostnet(1.0);
  const auto shapes = trace_shapes(a, a.input);
  const auto at = [&](const std::string& n) { return shapes[a.index_of(n)]; };
  EXPECT_EQ(at("stem"), (Shape{1, 16, 112, 112}));
  EXPECT_EQ(at("bneck2"), (Shape{1, 24, 56, 56}));
  EXPECT_EQ(at("bneck4"), (Shape{1, 40, 28, 28}));
  EXPECT_EQ(at("bneck6"), (Shape{1, 80, 14, 14}));
  EXPECT_EQ(at("bneck11"), (Shape{1, 112, 14, 14}));
  EXPECT_EQ(at("bneck16"), (Shape{1, 160, 7, 7}));
  EXPECT_EQ(at("head_conv"), (Shape{1, 960, 7, 7}));
  EXPECT_EQ(at("head_fc"), (Shape{1, 1280, 1, 1}));
  EXPECT_EQ(shapes.back(), (Shape{1, 1000, 1, 1}));
  for (const char* n : {"bneck13", "bneck14", "bneck15", "bneck16"}) {
    const auto& g = std::get<GhostBottleneckConfig>(a.nodes[a.index_of(n)].config);
    EXPECT_EQ(g.exp, 960u);
    EXPECT_EQ(g.out, 160u);
  }
  EXPECT_EQ(std::get<GhostBottleneckConfig>(a.nodes[a.index_of("bneck12")].config).exp, 672u);
  EXPECT_THROW(build_c_ghostnet(0.0), ConfigError);
  EXPECT_THROW(build_c_ghostnet(0.05), ConfigError);
}

TEST(Builders, GGhostNetStages) {
  const ArchSpec a = build_g_ghostnet(1.0);
  const auto shapes = trace_shapes(a, a.input);
  EXPECT_EQ(shapes[a.index_of("stage1")], (Shape{1, 24, 56, 56}));
  EXPECT_EQ(shapes[a.index_of("stage2")], (Shape{1, 40, 28, 28}));
  EXPECT_EQ(shapes[a.index_of("stage3")], (Shape{1, 80, 14, 14}));
  EXPECT_EQ(shapes[a.index_of("stage4")], (Shape{1, 160, 7, 7}));
  Network<float> net(a);
  auto* st = dynamic_cast<GGhostStage<float>*>(net.module("stage3"));
  ASSERT_NE(st, nullptr);
  EXPECT_EQ(st->complicated_channels(), 48u);
  EXPECT_EQ(st->ghost_channels(), 32u);
  ASSERT_NE(st->mix(), nullptr);

  // lambda = 0 is the plain backbone; converting it back at lambda = 0.4 with
  // the builder's options reproduces the G-GhostNet node for node.
  const ArchSpec plain = build_g_ghostnet(1.0, 224, 1000, 0.0);
  for (const auto& n : plain.nodes) EXPECT_NE(n.kind(), "gghost_stage");
  const ArchSpec again = g_ghostify(plain, GGhostOptions{0.4, CheapKind::Conv1x1, true, StageLayout::Literal});
  ASSERT_EQ(again.nodes.size(), a.nodes.size());
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    EXPECT_TRUE(again.nodes[i].config == a.nodes[i].config) << a.nodes[i].name;
    EXPECT_EQ(again.nodes[i].inputs.size(), a.nodes[i].inputs.size());
  }
  EXPECT_EQ(count_costs(again).total, count_costs(a).total);
}

TEST(Builders, ResNetAndVggShapes) {
  const ArchSpec r56 = build_resnet(56);
  const auto s56 = trace_shapes(r56, r56.input);
  EXPECT_EQ(s56[r56.index_of("stage1_block9")], (Shape{1, 16, 32, 32}));
  EXPECT_EQ(s56[r56.index_of("stage3_block9")], (Shape{1, 64, 8, 8}));
  const ArchSpec r50 = build_resnet(50);
  EXPECT_EQ(trace_shapes(r50, r50.input)[r50.index_of("stage4_block3")], (Shape{1, 2048, 7, 7}));
  const ArchSpec vgg = build_vgg16_cifar();
  EXPECT_EQ(trace_shapes(vgg, vgg.input)[vgg.index_of("pool5")], (Shape{1, 512, 1, 1}));
  const auto stages = detect_stages(r56);
  std::vector<std::size_t> counts;
  for (const auto& s : stages) counts.push_back(s.count);
  EXPECT_EQ(counts, (std::vector<std::size_t>{1, 9, 9, 9}));
}

TEST(Conversions, PreserveInputOutputContract) {
  for (const auto& name : zoo_names()) {
    const ArchSpec base = name == "g_ghostnet" ? build_g_ghostnet(1.0, 224, 1000, 0.0) : build_arch(name);
    for (std::size_t s : {1u, 2u, 3u}) {
      const ArchSpec c = c_ghostify(base, s, 3);
      EXPECT_EQ(c.input, base.input);
      EXPECT_EQ(num_classes(c), num_classes(base));
    }
    for (double l : {0.0, 0.2, 0.5})
      for (std::optional<StageLayout> layout : {std::optional<StageLayout>{}, std::optional{StageLayout::Tail},
                                                std::optional{StageLayout::Literal}}) {
        const ArchSpec g = g_ghostify(base, GGhostOptions{l, CheapKind::Conv1x1, true, layout});
        EXPECT_EQ(g.input, base.input);
        EXPECT_EQ(num_classes(g), num_classes(base));
        Network<float> net(g);
        EXPECT_EQ(net.out_shape().c, num_classes(base));
      }
  }
}

TEST(Conversions, DegenerateSettingsKeepCosts) {
  for (const auto& name : zoo_names()) {
    const ArchSpec base = build_arch(name);
    EXPECT_EQ(count_costs(c_ghostify(base, 1, 3)).total, count_costs(base).total) << name;
    EXPECT_EQ(to_json(c_ghostify(base, 1, 3)), to_json(base));
    if (name == "g_ghostnet") continue;  // already converted: no block stages left
    for (std::optional<StageLayout> layout : {std::optional<StageLayout>{}, std::optional{StageLayout::Tail},
                                              std::optional{StageLayout::Literal}})
      EXPECT_EQ(count_costs(g_ghostify(base, GGhostOptions{0.0, CheapKind::Conv1x1, true, layout})).total,
                count_costs(base).total)
          << name;
  }
  EXPECT_THROW(g_ghostify(build_g_ghostnet(), {}), ConfigError);
  EXPECT_THROW(g_ghostify(build_resnet(56), GGhostOptions{1.0}), ConfigError);
  EXPECT_THROW(c_ghostify(build_resnet(56), 2, 4), ConfigError);
}

TEST(Conversions, CGhostifyScope) {
  const ArchSpec a = c_ghostify(build_c_ghostnet(1.0), 2, 3);
  EXPECT_TRUE(std::get<ConvConfig>(a.nodes[a.index_of("stem")].config).ghost.enabled());
  EXPECT_FALSE(std::get<ConvConfig>(a.nodes[a.index_of("head_fc")].config).ghost.enabled());  // no BN
  const ArchSpec v = c_ghostify(build_vgg16_cifar(), 4, 3);
  for (const auto& n : v.nodes)
    if (const auto* c = std::get_if<ConvConfig>(&n.config)) EXPECT_EQ(c->ghost.s, 4u) << n.name;
}

TEST(WidthMultiplier, MonotoneParams) {
  const double alphas[] = {0.25, 0.5, 0.75, 1.0, 1.3, 1.6};
  for (const std::string name : {"c_ghostnet", "g_ghostnet"}) {
    std::uint64_t prev = 0;
    for (double a : alphas) {
      const auto p = count_costs(build_arch(name, a)).total.params;
      EXPECT_LE(prev, p) << name << " alpha " << a;
      prev = p;
    }
  }
  EXPECT_EQ(round_width4(2.0), 4u);
  EXPECT_EQ(round_width4(5.9), 4u);
  EXPECT_EQ(round_width4(6.0), 8u);
  EXPECT_EQ(round_width4(160.0), 160u);
  EXPECT_THROW(round_width4(1.5), ConfigError);
}
