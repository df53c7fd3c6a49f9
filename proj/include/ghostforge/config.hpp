// SPDX-License-Identifier: Apache-2.0
//
// Plain configuration records shared by the runtime modules, the architecture
// graph and the cost model.
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ghostforge/tensor.hpp"

namespace ghostforge {

/// Ghost replacement of an ordinary convolution: ratio s and cheap kernel d.
/// s == 1 means "plain convolution".
struct GhostParams {
  std::size_t s = 1;
  std::size_t d = 3;

  bool enabled() const { return s > 1; }
  bool operator==(const GhostParams&) const = default;
};

struct ConvConfig {
  std::size_t out = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::optional<std::size_t> padding;  // defaults to kernel / 2
  std::size_t groups = 1;
  bool depthwise = false;  // groups = in_channels, overrides `groups`
  bool bias = false;
  bool bn = true;
  bool relu = true;
  GhostParams ghost;

  std::size_t pad() const { return padding.value_or(kernel / 2); }
  std::size_t groups_for(std::size_t in_channels) const { return depthwise ? in_channels : groups; }
  bool operator==(const ConvConfig&) const = default;
};

struct BasicBlockConfig {
  std::size_t out = 1;
  std::size_t stride = 1;
  GhostParams ghost;
  bool operator==(const BasicBlockConfig&) const = default;
};

struct BottleneckConfig {
  std::size_t mid = 1;
  std::size_t out = 1;
  std::size_t stride = 1;
  GhostParams ghost;
  bool operator==(const BottleneckConfig&) const = default;
};

struct GhostBottleneckConfig {
  std::size_t exp = 1;
  std::size_t out = 1;
  std::size_t stride = 1;
  bool se = false;
  std::size_t dw_kernel = 3;
  std::size_t s = 2;
  std::size_t d = 3;
  bool operator==(const GhostBottleneckConfig&) const = default;
};

struct GGBlockConfig {
  std::size_t out = 1;
  std::size_t stride = 1;
  std::size_t expansion = 3;
  bool se = true;
  GhostParams ghost;
  bool operator==(const GGBlockConfig&) const = default;
};

using BlockConfig =
    std::variant<ConvConfig, BasicBlockConfig, BottleneckConfig, GhostBottleneckConfig, GGBlockConfig>;

enum class CheapKind { Conv1x1, Conv3x3, Conv5x5, Identity, None };
enum class StageLayout { Tail, Literal };

inline std::string to_string(CheapKind k) {
  switch (k) {
    case CheapKind::Conv1x1: return "conv1x1";
    case CheapKind::Conv3x3: return "conv3x3";
    case CheapKind::Conv5x5: return "conv5x5";
    case CheapKind::Identity: return "identity";
    case CheapKind::None: return "none";
  }
  return "none";
}

inline CheapKind parse_cheap_kind(const std::string& s) {
  if (s == "conv1x1" || s == "1x1") return CheapKind::Conv1x1;
  if (s == "conv3x3" || s == "3x3") return CheapKind::Conv3x3;
  if (s == "conv5x5" || s == "5x5") return CheapKind::Conv5x5;
  if (s == "identity") return CheapKind::Identity;
  if (s == "none") return CheapKind::None;
  throw ConfigError("unknown cheap operation '" + s + "'");
}

inline std::size_t cheap_kernel(CheapKind k) {
  switch (k) {
    case CheapKind::Conv1x1: return 1;
    case CheapKind::Conv3x3: return 3;
    case CheapKind::Conv5x5: return 5;
    default: return 0;
  }
}

inline std::string to_string(StageLayout l) { return l == StageLayout::Tail ? "tail" : "literal"; }

inline StageLayout parse_stage_layout(const std::string& s) {
  if (s == "tail") return StageLayout::Tail;
  if (s == "literal") return StageLayout::Literal;
  throw ConfigError("unknown stage layout '" + s + "'");
}

/// A G-Ghost stage replaces a run of blocks. `blocks` holds the original
/// per-block configs; the first one carries the stage stride.
struct GGhostStageConfig {
  std::vector<BlockConfig> blocks;
  double lambda = 0.5;
  CheapKind cheap = CheapKind::Conv1x1;
  bool mix = false;
  StageLayout layout = StageLayout::Tail;
  bool operator==(const GGhostStageConfig&) const = default;
};

struct MaxPoolConfig {
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  bool operator==(const MaxPoolConfig&) const = default;
};

struct GlobalAvgPoolConfig {
  bool operator==(const GlobalAvgPoolConfig&) const = default;
};

struct FcConfig {
  std::size_t out = 1;
  bool bias = true;
  bool bn = false;
  bool relu = false;
  bool operator==(const FcConfig&) const = default;
};

struct AddConfig {
  bool relu = false;
  bool operator==(const AddConfig&) const = default;
};

struct ConcatConfig {
  bool operator==(const ConcatConfig&) const = default;
};

using NodeConfig = std::variant<ConvConfig, BasicBlockConfig, BottleneckConfig, GhostBottleneckConfig,
                                GGBlockConfig, GGhostStageConfig, MaxPoolConfig, GlobalAvgPoolConfig,
                                FcConfig, AddConfig, ConcatConfig>;

inline const char* kind_name(const NodeConfig& c) {
  static constexpr const char* names[] = {"conv",         "basic_block",    "bottleneck", "ghost_bottleneck",
                                          "gg_block",     "gghost_stage",   "max_pool",   "global_avg_pool",
                                          "fc",           "add",            "concat"};
  return names[c.index()];
}

inline NodeConfig to_node_config(const BlockConfig& b) {
  return std::visit([](const auto& v) -> NodeConfig { return v; }, b);
}

inline std::optional<BlockConfig> to_block_config(const NodeConfig& c) {
  return std::visit(
      [](const auto& v) -> std::optional<BlockConfig> {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_constructible_v<BlockConfig, V>)
          return BlockConfig{v};
        else
          return std::nullopt;
      },
      c);
}

// ---------------------------------------------------------------------------
// Width helpers

/// Complicated-path width round((1 - lambda) * c), ties toward the complicated path.
inline std::size_t complicated_width(std::size_t c, double lambda) {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw ConfigError("ghost ratio lambda must lie in [0, 1)");
  return static_cast<std::size_t>(std::floor((1.0 - lambda) * static_cast<double>(c) + 0.5 + 1e-9));
}

/// Nearest multiple of 4 (halves round up), never below 4.
inline std::size_t round_width4(double v) {
  if (!(v >= 2.0)) throw ConfigError("width multiplier makes a layer narrower than 4 channels");
  const auto r = static_cast<std::size_t>((v + 2.0) / 4.0) * 4;
  return r < 4 ? 4 : r;
}

/// SE reduced width: multiple of 4, at least 4, never more than 10% below v.
inline std::size_t make_divisible4(double v) {
  auto r = static_cast<std::size_t>((v + 2.0) / 4.0) * 4;
  if (r < 4) r = 4;
  if (static_cast<double>(r) < 0.9 * v) r += 4;
  return r;
}

inline std::size_t block_out(const BlockConfig& b) {
  return std::visit([](const auto& v) { return v.out; }, b);
}

inline std::size_t block_stride(const BlockConfig& b) {
  return std::visit([](const auto& v) { return v.stride; }, b);
}

/// Same block with output width `out` (internal widths scaled proportionally).
inline BlockConfig with_out_width(const BlockConfig& b, std::size_t out) {
  auto scaled = [](std::size_t w, std::size_t num, std::size_t den) {
    auto r = static_cast<std::size_t>(std::floor(static_cast<double>(w) * static_cast<double>(num) /
                                                 static_cast<double>(den) + 0.5));
    return r < 1 ? std::size_t{1} : r;
  };
  return std::visit(
      [&](auto v) -> BlockConfig {
        using V = decltype(v);
        if constexpr (std::is_same_v<V, BottleneckConfig>) v.mid = scaled(v.mid, out, v.out);
        if constexpr (std::is_same_v<V, GhostBottleneckConfig>) v.exp = scaled(v.exp, out, v.out);
        v.out = out;
        return v;
      },
      b);
}

}  // namespace ghostforge
