// SPDX-License-Identifier: Apache-2.0
//
// Architecture graphs: node list, JSON form, shape trace, reference builders
// and the two conversion passes.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ghostforge/config.hpp"
#include "ghostforge/tensor.hpp"

namespace ghostforge {

using json = nlohmann::json;

inline constexpr const char* kInputName = "input";

struct Node {
  std::string name;
  NodeConfig config;
  std::vector<std::string> inputs;

  std::string kind() const { return kind_name(config); }
};

struct ArchSpec {
  std::string name;
  Shape input{1, 3, 224, 224};  // n is ignored
  std::vector<Node> nodes;

  std::size_t index_of(const std::string& node) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].name == node) return i;
    throw ConfigError("arch '" + name + "': no node named '" + node + "'");
  }

  /// Checks names, references, ordering and the single-output rule.
  void validate() const {
    std::set<std::string> seen;
    std::map<std::string, int> consumers;
    for (const auto& n : nodes) {
      if (n.name.empty() || n.name == kInputName)
        throw ConfigError("arch '" + name + "': invalid node name '" + n.name + "'");
      if (!seen.insert(n.name).second) throw ConfigError("arch '" + name + "': duplicate node '" + n.name + "'");
      const bool multi = std::holds_alternative<AddConfig>(n.config) || std::holds_alternative<ConcatConfig>(n.config);
      if (n.inputs.empty() || (!multi && n.inputs.size() != 1))
        throw ConfigError("node '" + n.name + "': kind " + n.kind() + " takes " + (multi ? "one or more" : "exactly one") + " input");
      for (const auto& in : n.inputs) {
        if (in != kInputName && seen.count(in) == 0)
          throw ConfigError("node '" + n.name + "': input '" + in + "' is not an earlier node");
        if (in == n.name) throw ConfigError("node '" + n.name + "': self reference");
        ++consumers[in];
      }
    }
    if (nodes.empty()) return;
    std::size_t sinks = 0;
    for (const auto& n : nodes)
      if (consumers[n.name] == 0) ++sinks;
    if (sinks != 1) throw ConfigError("arch '" + name + "': expected exactly one output node, found " + std::to_string(sinks));
    if (consumers[nodes.back().name] != 0) throw ConfigError("arch '" + name + "': the output node must be last");
  }
};

// ---------------------------------------------------------------------------
// Shape trace

namespace detail {

inline std::size_t extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0 || k == 0) throw ConfigError("kernel and stride must be >= 1");
  if (in + 2 * pad < k) throw ConfigError("kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

inline Shape block_out_shape(const BlockConfig& b, const Shape& in) {
  return std::visit(
      [&](const auto& c) -> Shape {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, ConvConfig>) {
          const std::size_t g = c.groups_for(in.c);
          if (g == 0 || in.c % g != 0 || c.out % g != 0) throw ConfigError("conv: groups must divide channels");
          return {1, c.out, extent(in.h, c.kernel, c.stride, c.pad()), extent(in.w, c.kernel, c.stride, c.pad())};
        } else {
          std::size_t k = 3;
          if constexpr (std::is_same_v<C, GhostBottleneckConfig>) k = c.dw_kernel;
          if (c.stride == 1) return {1, c.out, in.h, in.w};
          return {1, c.out, extent(in.h, k, c.stride, k / 2), extent(in.w, k, c.stride, k / 2)};
        }
      },
      b);
}

}  // namespace detail

/// Output shape (n = 1) of every node for the given input (C, H, W).
inline std::vector<Shape> trace_shapes(const ArchSpec& arch, const Shape& input) {
  arch.validate();
  std::vector<Shape> out;
  out.reserve(arch.nodes.size());
  std::map<std::string, Shape> by_name{{kInputName, Shape{1, input.c, input.h, input.w}}};
  for (const auto& node : arch.nodes) {
    std::vector<Shape> ins;
    for (const auto& i : node.inputs) ins.push_back(by_name.at(i));
    const Shape& in = ins.front();
    Shape s = std::visit(
        [&](const auto& c) -> Shape {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_constructible_v<BlockConfig, C>) {
            return detail::block_out_shape(BlockConfig{c}, in);
          } else if constexpr (std::is_same_v<C, GGhostStageConfig>) {
            if (c.blocks.empty()) throw ConfigError("gghost_stage: needs at least one block");
            Shape cur = in;
            for (const auto& b : c.blocks) cur = detail::block_out_shape(b, cur);
            return cur;
          } else if constexpr (std::is_same_v<C, MaxPoolConfig>) {
            return {1, in.c, detail::extent(in.h, c.kernel, c.stride, c.padding),
                    detail::extent(in.w, c.kernel, c.stride, c.padding)};
          } else if constexpr (std::is_same_v<C, GlobalAvgPoolConfig>) {
            return {1, in.c, 1, 1};
          } else if constexpr (std::is_same_v<C, FcConfig>) {
            return {1, c.out, 1, 1};
          } else if constexpr (std::is_same_v<C, AddConfig>) {
            for (const auto& o : ins)
              if (o != in) throw DimensionError("add '" + node.name + "'", "shape", in.numel(), o.numel());
            return in;
          } else {
            std::size_t total = 0;
            for (const auto& o : ins) {
              expect_axis("concat", "height", in.h, o.h);
              expect_axis("concat", "width", in.w, o.w);
              total += o.c;
            }
            return {1, total, in.h, in.w};
          }
        },
        node.config);
    by_name[node.name] = s;
    out.push_back(s);
  }
  return out;
}

inline std::size_t num_classes(const ArchSpec& arch) {
  if (arch.nodes.empty()) return 0;
  return trace_shapes(arch, arch.input).back().c;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void check_keys(const json& j, const std::string& node, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("node '" + node + "': config must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("node '" + node + "': unknown config field '" + key + "'");
  }
}

inline json ghost_to_json(const GhostParams& g) { return json{{"s", g.s}, {"d", g.d}}; }

inline GhostParams ghost_from_json(const json& j, const std::string& node) {
  if (!j.contains("ghost")) return {};
  check_keys(j.at("ghost"), node, {"s", "d"});
  return {j["ghost"].value("s", std::size_t{1}), j["ghost"].value("d", std::size_t{3})};
}

template <class Cfg>
json config_to_json(const Cfg& c);

inline json block_to_json(const BlockConfig& b) {
  return std::visit([](const auto& c) { return json{{"kind", kind_name(NodeConfig{c})}, {"config", config_to_json(c)}}; },
                    b);
}

template <class Cfg>
json config_to_json(const Cfg& c) {
  json j = json::object();
  if constexpr (std::is_same_v<Cfg, ConvConfig>) {
    j = {{"out", c.out}, {"kernel", c.kernel}, {"stride", c.stride}, {"groups", c.groups}, {"depthwise", c.depthwise},
         {"bias", c.bias}, {"bn", c.bn}, {"relu", c.relu}};
    if (c.padding) j["padding"] = *c.padding;
    if (c.ghost.enabled()) j["ghost"] = ghost_to_json(c.ghost);
  } else if constexpr (std::is_same_v<Cfg, BasicBlockConfig>) {
    j = {{"out", c.out}, {"stride", c.stride}};
    if (c.ghost.enabled()) j["ghost"] = ghost_to_json(c.ghost);
  } else if constexpr (std::is_same_v<Cfg, BottleneckConfig>) {
    j = {{"mid", c.mid}, {"out", c.out}, {"stride", c.stride}};
    if (c.ghost.enabled()) j["ghost"] = ghost_to_json(c.ghost);
  } else if constexpr (std::is_same_v<Cfg, GhostBottleneckConfig>) {
    j = {{"exp", c.exp}, {"out", c.out}, {"stride", c.stride}, {"se", c.se}, {"dw_kernel", c.dw_kernel},
         {"s", c.s}, {"d", c.d}};
  } else if constexpr (std::is_same_v<Cfg, GGBlockConfig>) {
    j = {{"out", c.out}, {"stride", c.stride}, {"expansion", c.expansion}, {"se", c.se}};
    if (c.ghost.enabled()) j["ghost"] = ghost_to_json(c.ghost);
  } else if constexpr (std::is_same_v<Cfg, GGhostStageConfig>) {
    json blocks = json::array();
    for (const auto& b : c.blocks) blocks.push_back(block_to_json(b));
    j = {{"blocks", blocks}, {"lambda", c.lambda}, {"cheap", to_string(c.cheap)}, {"mix", c.mix},
         {"layout", to_string(c.layout)}};
  } else if constexpr (std::is_same_v<Cfg, MaxPoolConfig>) {
    j = {{"kernel", c.kernel}, {"stride", c.stride}, {"padding", c.padding}};
  } else if constexpr (std::is_same_v<Cfg, FcConfig>) {
    j = {{"out", c.out}, {"bias", c.bias}, {"bn", c.bn}, {"relu", c.relu}};
  } else if constexpr (std::is_same_v<Cfg, AddConfig>) {
    j = {{"relu", c.relu}};
  }
  return j;
}

inline NodeConfig config_from_json(const std::string& kind, const json& j, const std::string& node);

inline BlockConfig block_from_json(const json& j, const std::string& node) {
  check_keys(j, node, {"kind", "config"});
  auto cfg = to_block_config(config_from_json(j.at("kind").get<std::string>(), j.value("config", json::object()), node));
  if (!cfg) throw ConfigError("node '" + node + "': stage blocks must be block kinds");
  return *cfg;
}

inline NodeConfig config_from_json(const std::string& kind, const json& j, const std::string& node) {
  using sz = std::size_t;
  if (kind == "conv") {
    check_keys(j, node, {"out", "kernel", "stride", "padding", "groups", "depthwise", "bias", "bn", "relu", "ghost"});
    ConvConfig c;
    c.out = j.at("out").get<sz>();
    c.kernel = j.value("kernel", sz{3});
    c.stride = j.value("stride", sz{1});
    if (j.contains("padding")) c.padding = j["padding"].get<sz>();
    c.groups = j.value("groups", sz{1});
    c.depthwise = j.value("depthwise", false);
    c.bias = j.value("bias", false);
    c.bn = j.value("bn", true);
    c.relu = j.value("relu", true);
    c.ghost = ghost_from_json(j, node);
    return c;
  }
  if (kind == "basic_block") {
    check_keys(j, node, {"out", "stride", "ghost"});
    return BasicBlockConfig{j.at("out").get<sz>(), j.value("stride", sz{1}), ghost_from_json(j, node)};
  }
  if (kind == "bottleneck") {
    check_keys(j, node, {"mid", "out", "stride", "ghost"});
    return BottleneckConfig{j.at("mid").get<sz>(), j.at("out").get<sz>(), j.value("stride", sz{1}),
                            ghost_from_json(j, node)};
  }
  if (kind == "ghost_bottleneck") {
    check_keys(j, node, {"exp", "out", "stride", "se", "dw_kernel", "s", "d"});
    return GhostBottleneckConfig{j.at("exp").get<sz>(), j.at("out").get<sz>(), j.value("stride", sz{1}),
                                 j.value("se", false),   j.value("dw_kernel", sz{3}), j.value("s", sz{2}),
                                 j.value("d", sz{3})};
  }
  if (kind == "gg_block") {
    check_keys(j, node, {"out", "stride", "expansion", "se", "ghost"});
    return GGBlockConfig{j.at("out").get<sz>(), j.value("stride", sz{1}), j.value("expansion", sz{3}),
                         j.value("se", true), ghost_from_json(j, node)};
  }
  if (kind == "gghost_stage") {
    check_keys(j, node, {"blocks", "lambda", "cheap", "mix", "layout"});
    GGhostStageConfig c;
    for (const auto& b : j.at("blocks")) c.blocks.push_back(block_from_json(b, node));
    c.lambda = j.value("lambda", 0.5);
    c.cheap = parse_cheap_kind(j.value("cheap", std::string("conv1x1")));
    c.mix = j.value("mix", false);
    c.layout = parse_stage_layout(j.value("layout", std::string("tail")));
    return c;
  }
  if (kind == "max_pool") {
    check_keys(j, node, {"kernel", "stride", "padding"});
    return MaxPoolConfig{j.value("kernel", sz{3}), j.value("stride", sz{2}), j.value("padding", sz{1})};
  }
  if (kind == "global_avg_pool") {
    check_keys(j, node, {});
    return GlobalAvgPoolConfig{};
  }
  if (kind == "fc") {
    check_keys(j, node, {"out", "bias", "bn", "relu"});
    return FcConfig{j.at("out").get<sz>(), j.value("bias", true), j.value("bn", false), j.value("relu", false)};
  }
  if (kind == "add") {
    check_keys(j, node, {"relu"});
    return AddConfig{j.value("relu", false)};
  }
  if (kind == "concat") {
    check_keys(j, node, {});
    return ConcatConfig{};
  }
  throw ConfigError("node '" + node + "': unknown kind '" + kind + "'");
}

}  // namespace detail

inline json to_json(const ArchSpec& arch) {
  json nodes = json::array();
  for (const auto& n : arch.nodes) {
    json cfg = std::visit([](const auto& c) { return detail::config_to_json(c); }, n.config);
    nodes.push_back({{"name", n.name}, {"kind", n.kind()}, {"config", cfg}, {"inputs", n.inputs}});
  }
  return {{"name", arch.name}, {"input_shape", {arch.input.c, arch.input.h, arch.input.w}}, {"nodes", nodes}};
}

inline ArchSpec arch_from_json(const json& j) {
  try {
    ArchSpec a;
    a.name = j.value("name", std::string("unnamed"));
    const auto& shape = j.at("input_shape");
    if (!shape.is_array() || shape.size() != 3) throw ConfigError("input_shape must be [C, H, W]");
    a.input = {1, shape[0].get<std::size_t>(), shape[1].get<std::size_t>(), shape[2].get<std::size_t>()};
    for (const auto& jn : j.at("nodes")) {
      for (const auto& [key, _] : jn.items())
        if (key != "name" && key != "kind" && key != "config" && key != "inputs")
          throw ConfigError("node '" + jn.value("name", std::string("?")) + "': unknown field '" + key + "'");
      Node n;
      n.name = jn.at("name").get<std::string>();
      n.config = detail::config_from_json(jn.at("kind").get<std::string>(), jn.value("config", json::object()), n.name);
      n.inputs = jn.at("inputs").get<std::vector<std::string>>();
      a.nodes.push_back(std::move(n));
    }
    a.validate();
    return a;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed architecture document: ") + e.what());
  }
}

inline ArchSpec load_arch(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(path, std::string("invalid JSON: ") + e.what());
  }
  return arch_from_json(j);
}

inline void save_arch(const ArchSpec& arch, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  out << to_json(arch).dump(2) << "\n";
  if (!out) throw IoError(path, "write failed");
}

// ---------------------------------------------------------------------------
// Builders

namespace detail {

class ArchBuilder {
 public:
  ArchBuilder(std::string name, Shape input) {
    arch_.name = std::move(name);
    arch_.input = input;
  }

  const std::string& add(std::string name, NodeConfig cfg) { return add(std::move(name), std::move(cfg), {last_}); }

  const std::string& add(std::string name, NodeConfig cfg, std::vector<std::string> inputs) {
    arch_.nodes.push_back(Node{std::move(name), std::move(cfg), std::move(inputs)});
    last_ = arch_.nodes.back().name;
    return last_;
  }

  ArchSpec finish() {
    arch_.validate();
    trace_shapes(arch_, arch_.input);
    return std::move(arch_);
  }

 private:
  ArchSpec arch_;
  std::string last_ = kInputName;
};

inline ConvConfig conv(std::size_t out, std::size_t k, std::size_t stride = 1, bool bn = true, bool relu = true,
                       bool bias = false) {
  ConvConfig c;
  c.out = out;
  c.kernel = k;
  c.stride = stride;
  c.bn = bn;
  c.relu = relu;
  c.bias = bias;
  return c;
}

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("width multiplier must be > 0");
}

inline std::size_t check_classes(std::size_t classes) {
  if (classes < 1) throw ConfigError("class count must be >= 1");
  return classes;
}

}  // namespace detail

/// VGG16 for 32x32 inputs: 13 conv-BN-ReLU layers, 5 max pools, FC 512 + BN + ReLU, FC classes.
inline ArchSpec build_vgg16_cifar(std::size_t classes = 10) {
  detail::ArchBuilder b("vgg16_cifar", {1, 3, 32, 32});
  const std::vector<std::vector<std::size_t>> groups = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = 0; i < groups[g].size(); ++i)
      b.add("conv" + std::to_string(g + 1) + "_" + std::to_string(i + 1), detail::conv(groups[g][i], 3));
    b.add("pool" + std::to_string(g + 1), MaxPoolConfig{2, 2, 0});
  }
  b.add("fc1", FcConfig{512, true, true, true});
  b.add("fc2", FcConfig{detail::check_classes(classes), true, false, false});
  return b.finish();
}

/// ResNet-34 / ResNet-50 (ImageNet, 224x224) and ResNet-56 (CIFAR, 32x32).
inline ArchSpec build_resnet(int depth, std::size_t classes = 0) {
  if (depth == 56) {
    detail::ArchBuilder b("resnet56", {1, 3, 32, 32});
    b.add("stem", detail::conv(16, 3));
    const std::size_t widths[] = {16, 32, 64};
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < 9; ++i)
        b.add("stage" + std::to_string(s + 1) + "_block" + std::to_string(i + 1),
              BasicBlockConfig{widths[s], (s > 0 && i == 0) ? std::size_t{2} : std::size_t{1}, {}});
    b.add("pool", GlobalAvgPoolConfig{});
    b.add("fc", FcConfig{detail::check_classes(classes ? classes : 10), true, false, false});
    return b.finish();
  }
  if (depth != 34 && depth != 50) throw ConfigError("unsupported ResNet depth " + std::to_string(depth));
  detail::ArchBuilder b("resnet" + std::to_string(depth), {1, 3, 224, 224});
  b.add("stem", detail::conv(64, 7, 2));
  b.add("stem_pool", MaxPoolConfig{3, 2, 1});
  const std::size_t counts[] = {3, 4, 6, 3};
  const std::size_t widths[] = {64, 128, 256, 512};
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t i = 0; i < counts[s]; ++i) {
      const std::size_t stride = (s > 0 && i == 0) ? 2 : 1;
      const std::string name = "stage" + std::to_string(s + 1) + "_block" + std::to_string(i + 1);
      if (depth == 34)
        b.add(name, BasicBlockConfig{widths[s], stride, {}});
      else
        b.add(name, BottleneckConfig{widths[s], 4 * widths[s], stride, {}});
    }
  b.add("pool", GlobalAvgPoolConfig{});
  b.add("fc", FcConfig{detail::check_classes(classes ? classes : 1000), true, false, false});
  return b.finish();
}

namespace detail {

/// Stem conv (stride 1 on inputs of 32x32 or smaller), then the head shared by
/// both GhostNets: conv1x1 to 960 alpha, avgpool, conv1x1 to 1280 with bias, FC.
inline void ghostnet_head(ArchBuilder& b, double alpha, std::size_t classes) {
  b.add("head_conv", conv(round_width4(960 * alpha), 1));
  b.add("pool", GlobalAvgPoolConfig{});
  b.add("head_fc", conv(1280, 1, 1, false, true, true));
  b.add("classifier", FcConfig{check_classes(classes), true, false, false});
}

}  // namespace detail

/// C-GhostNet with width multiplier alpha. Widths round to multiples of 4; the
/// 1280-wide pre-classifier layer is not scaled.
inline ArchSpec build_c_ghostnet(double alpha = 1.0, std::size_t input_hw = 224, std::size_t classes = 1000) {
  detail::check_alpha(alpha);
  struct Row {
    std::size_t exp, out;
    bool se;
    std::size_t stride;
  };
  static constexpr Row rows[] = {{16, 16, false, 1},   {48, 24, false, 2},   {72, 24, false, 1},
                                 {72, 40, true, 2},    {120, 40, true, 1},   {240, 80, false, 2},
                                 {200, 80, false, 1},  {184, 80, false, 1},  {184, 80, false, 1},
                                 {480, 112, true, 1},  {672, 112, true, 1},  {672, 160, true, 2},
                                 {960, 160, false, 1}, {960, 160, true, 1},  {960, 160, false, 1},
                                 {960, 160, true, 1}};
  std::ostringstream name;
  name << "c_ghostnet_" << alpha;
  detail::ArchBuilder b(name.str(), {1, 3, input_hw, input_hw});
  b.add("stem", detail::conv(round_width4(16 * alpha), 3, input_hw <= 32 ? 1 : 2));
  for (std::size_t i = 0; i < std::size(rows); ++i) {
    const Row& r = rows[i];
    b.add("bneck" + std::to_string(i + 1),
          GhostBottleneckConfig{round_width4(r.exp * alpha), round_width4(r.out * alpha), r.stride, r.se, 3, 2, 3});
  }
  detail::ghostnet_head(b, alpha, classes);
  return b.finish();
}

/// G-GhostNet: four stages of residual bottlenecks (expansion 3, SE) turned
/// into G-Ghost stages with ghost ratio lambda, 1x1 cheap operation and mix.
/// lambda = 0 emits the plain backbone.
inline ArchSpec build_g_ghostnet(double alpha = 1.0, std::size_t input_hw = 224, std::size_t classes = 1000,
                                 double lambda = 0.4) {
  detail::check_alpha(alpha);
  std::ostringstream name;
  name << "g_ghostnet_" << alpha;
  detail::ArchBuilder b(name.str(), {1, 3, input_hw, input_hw});
  b.add("stem", detail::conv(round_width4(16 * alpha), 3, input_hw <= 32 ? 1 : 2));
  const std::size_t outs[] = {24, 40, 80, 160};
  const std::size_t counts[] = {2, 2, 6, 6};
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t w = round_width4(outs[s] * alpha);
    std::vector<BlockConfig> blocks;
    for (std::size_t i = 0; i < counts[s]; ++i)
      blocks.push_back(GGBlockConfig{w, i == 0 ? std::size_t{2} : std::size_t{1}, 3, true, {}});
    const std::string stage = "stage" + std::to_string(s + 1);
    if (lambda > 0.0) {
      b.add(stage, GGhostStageConfig{blocks, lambda, CheapKind::Conv1x1, true, StageLayout::Literal});
    } else {
      for (std::size_t i = 0; i < blocks.size(); ++i)
        b.add(stage + "_block" + std::to_string(i + 1), to_node_config(blocks[i]));
    }
  }
  detail::ghostnet_head(b, alpha, classes);
  return b.finish();
}

inline const std::vector<std::string>& zoo_names() {
  static const std::vector<std::string> names = {"c_ghostnet", "g_ghostnet", "vgg16_cifar",
                                                 "resnet34",   "resnet50",   "resnet56"};
  return names;
}

/// Builds a zoo architecture by name. `input_hw` = 0 keeps the default size.
inline ArchSpec build_arch(const std::string& name, double alpha = 1.0, std::size_t input_hw = 0,
                           std::size_t classes = 0) {
  if (name == "c_ghostnet") return build_c_ghostnet(alpha, input_hw ? input_hw : 224, classes ? classes : 1000);
  if (name == "g_ghostnet") return build_g_ghostnet(alpha, input_hw ? input_hw : 224, classes ? classes : 1000);
  if (name == "vgg16_cifar") return build_vgg16_cifar(classes ? classes : 10);
  if (name == "resnet34") return build_resnet(34, classes);
  if (name == "resnet50") return build_resnet(50, classes);
  if (name == "resnet56") return build_resnet(56, classes);
  throw ConfigError("unknown architecture '" + name + "'");
}

// ---------------------------------------------------------------------------
// Conversion passes

/// Replaces every dense conv-BN layer (stand-alone or inside a block) by a
/// ghost module with ratio s and cheap kernel d. Depthwise/grouped convs,
/// convs without BN and FC layers are untouched; s = 1 is the identity.
inline ArchSpec c_ghostify(const ArchSpec& arch, std::size_t s, std::size_t d = 3) {
  if (s < 1) throw ConfigError("c_ghostify: s must be >= 1");
  if (d % 2 == 0) throw ConfigError("c_ghostify: d must be odd");
  ArchSpec out = arch;
  if (s == 1) return out;
  const GhostParams g{s, d};
  auto convert_block = [&](auto& c) {
    using C = std::decay_t<decltype(c)>;
    if constexpr (std::is_same_v<C, ConvConfig>) {
      if (c.bn && !c.depthwise && c.groups == 1) c.ghost = g;
    } else if constexpr (std::is_same_v<C, BasicBlockConfig> || std::is_same_v<C, BottleneckConfig> ||
                         std::is_same_v<C, GGBlockConfig>) {
      c.ghost = g;
    }
  };
  for (auto& n : out.nodes) {
    std::visit(
        [&](auto& c) {
          using C = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<C, GGhostStageConfig>) {
            for (auto& blk : c.blocks) std::visit(convert_block, blk);
          } else {
            convert_block(c);
          }
        },
        n.config);
  }
  out.name = arch.name + "_cghost_s" + std::to_string(s) + "_d" + std::to_string(d);
  return out;
}

/// A maximal chain of block nodes of one kind where every block after the
/// first keeps width and resolution.
struct StageInfo {
  std::size_t first = 0;
  std::size_t count = 0;
  std::string kind;
};

namespace detail {

inline bool is_block_node(const Node& n) {
  if (const auto* c = std::get_if<ConvConfig>(&n.config))
    return c->bn && c->relu && !c->depthwise && c->groups == 1 && !c->ghost.enabled();
  return std::holds_alternative<BasicBlockConfig>(n.config) || std::holds_alternative<BottleneckConfig>(n.config) ||
         std::holds_alternative<GhostBottleneckConfig>(n.config) || std::holds_alternative<GGBlockConfig>(n.config);
}

}  // namespace detail

inline std::vector<StageInfo> detect_stages(const ArchSpec& arch) {
  const auto shapes = trace_shapes(arch, arch.input);
  std::map<std::string, int> consumers;
  for (const auto& n : arch.nodes)
    for (const auto& i : n.inputs) ++consumers[i];
  auto in_channels = [&](std::size_t i) {
    const auto& src = arch.nodes[i].inputs.front();
    return src == kInputName ? arch.input.c : shapes[arch.index_of(src)].c;
  };
  std::vector<StageInfo> stages;
  std::size_t i = 0;
  while (i < arch.nodes.size()) {
    if (!detail::is_block_node(arch.nodes[i])) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < arch.nodes.size()) {
      const Node& n = arch.nodes[j];
      const Node& prev = arch.nodes[j - 1];
      if (n.config.index() != prev.config.index() || !detail::is_block_node(n)) break;
      if (n.inputs.size() != 1 || n.inputs.front() != prev.name || consumers[prev.name] != 1) break;
      auto blk = to_block_config(n.config);
      if (block_stride(*blk) != 1 || block_out(*blk) != in_channels(j)) break;
      if (std::holds_alternative<ConvConfig>(n.config) &&
          std::get<ConvConfig>(n.config).kernel != std::get<ConvConfig>(prev.config).kernel)
        break;
      ++j;
    }
    stages.push_back({i, j - i, arch.nodes[i].kind()});
    i = j;
  }
  return stages;
}

struct GGhostOptions {
  double lambda = 0.5;
  CheapKind cheap = CheapKind::Conv1x1;
  bool mix = true;
  /// Unset: per-stage default (see default_stage_layout).
  std::optional<StageLayout> layout;
};

/// Minimum stage length converted by g_ghostify for a layout.
inline std::size_t min_stage_blocks(StageLayout layout) { return layout == StageLayout::Tail ? 3 : 2; }

/// Plain conv stages have no shortcut, so the thin path needs no projection:
/// literal layout. Residual stages keep a full-width last block: tail layout.
inline StageLayout default_stage_layout(const StageInfo& st) {
  return st.kind == "conv" ? StageLayout::Literal : StageLayout::Tail;
}

/// Collapses every detected stage with enough blocks into one G-Ghost stage
/// node (named after the stage's last block, so consumers stay wired).
inline ArchSpec g_ghostify(const ArchSpec& arch, const GGhostOptions& opt) {
  complicated_width(1, opt.lambda);
  if (opt.lambda > 0.0 && opt.cheap == CheapKind::None)
    throw ConfigError("g_ghostify: cheap operation 'none' contradicts lambda > 0");
  const auto stages = detect_stages(arch);
  ArchSpec out;
  out.name = arch.name + "_gghost";
  out.input = arch.input;
  std::size_t converted = 0;
  std::size_t next = 0;
  for (const auto& st : stages) {
    while (next < st.first) out.nodes.push_back(arch.nodes[next++]);
    const StageLayout layout = opt.layout.value_or(default_stage_layout(st));
    if (st.count < min_stage_blocks(layout)) {
      for (std::size_t k = 0; k < st.count; ++k) out.nodes.push_back(arch.nodes[next++]);
      continue;
    }
    GGhostStageConfig cfg;
    cfg.lambda = opt.lambda;
    cfg.cheap = opt.cheap;
    cfg.mix = opt.mix;
    cfg.layout = layout;
    for (std::size_t k = 0; k < st.count; ++k) cfg.blocks.push_back(*to_block_config(arch.nodes[st.first + k].config));
    const Node& first = arch.nodes[st.first];
    const Node& last = arch.nodes[st.first + st.count - 1];
    out.nodes.push_back(Node{last.name, cfg, first.inputs});
    next = st.first + st.count;
    ++converted;
  }
  while (next < arch.nodes.size()) out.nodes.push_back(arch.nodes[next++]);
  if (converted == 0)
    throw ConfigError("g_ghostify: no convertible stage in '" + arch.name + "'");
  out.validate();
  trace_shapes(out, out.input);
  return out;
}

}  // namespace ghostforge
