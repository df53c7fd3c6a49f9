// SPDX-License-Identifier: Apache-2.0
//
// Executable network built from an ArchSpec.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ghostforge/arch.hpp"
#include "ghostforge/gghost.hpp"
#include "ghostforge/random.hpp"

namespace ghostforge {

template <class T>
ModulePtr<T> make_node_module(const Node& node, const Shape& in) {
  return std::visit(
      [&](const auto& c) -> ModulePtr<T> {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_constructible_v<BlockConfig, C>) return make_block<T>(BlockConfig{c}, in);
        if constexpr (std::is_same_v<C, GGhostStageConfig>) return std::make_unique<GGhostStage<T>>(c, in);
        if constexpr (std::is_same_v<C, MaxPoolConfig>) return std::make_unique<MaxPool<T>>(c, in);
        if constexpr (std::is_same_v<C, GlobalAvgPoolConfig>) return std::make_unique<GlobalAvgPool<T>>(in);
        if constexpr (std::is_same_v<C, FcConfig>) return std::make_unique<Linear<T>>(c, in);
        return nullptr;  // add / concat run inline
      },
      node.config);
}

/// He-normal weights (std = sqrt(2 / fan_in)) drawn from one Gaussian stream
/// in visit order; biases and BN shifts 0, BN scales 1, running stats (0, 1).
template <class T>
void init_parameters(Module<T>& m, std::uint64_t seed) {
  GaussianStream rng(seed);
  m.visit("", [&](ParamRef<T>& p) {
    auto& v = *p.value;
    switch (p.role) {
      case ParamRole::Weight: {
        const double stddev = std::sqrt(2.0 / static_cast<double>(p.fan_in == 0 ? 1 : p.fan_in));
        for (auto& x : v) x = static_cast<T>(stddev * rng.next());
        break;
      }
      case ParamRole::BnScale:
      case ParamRole::RunningVar: std::fill(v.begin(), v.end(), T(1)); break;
      default: std::fill(v.begin(), v.end(), T(0)); break;
    }
  });
}

template <class T>
class Network final : public Module<T> {
 public:
  explicit Network(const ArchSpec& arch) : Network(arch, arch.input) {}

  Network(const ArchSpec& arch, const Shape& input) : arch_(arch) {
    arch_.input = Shape{1, input.c, input.h, input.w};
    this->in_ = arch_.input;
    shapes_ = trace_shapes(arch_, arch_.input);
    inputs_.resize(arch_.nodes.size());
    for (std::size_t i = 0; i < arch_.nodes.size(); ++i) {
      const Node& n = arch_.nodes[i];
      for (const auto& src : n.inputs) inputs_[i].push_back(src == kInputName ? -1 : static_cast<int>(arch_.index_of(src)));
      const Shape in = inputs_[i].front() < 0 ? arch_.input : shapes_[inputs_[i].front()];
      modules_.push_back(make_node_module<T>(n, in));
      if (modules_.back() && modules_.back()->out_shape() != shapes_[i])
        throw ConfigError("node '" + n.name + "': module shape " + modules_.back()->out_shape().str() +
                          " disagrees with trace " + shapes_[i].str());
    }
    this->out_ = arch_.nodes.empty() ? arch_.input : shapes_.back();
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    expect_axis("Network::forward", "channels", arch_.input.c, x.c());
    expect_axis("Network::forward", "height", arch_.input.h, x.h());
    expect_axis("Network::forward", "width", arch_.input.w, x.w());
    if (arch_.nodes.empty()) return x;
    x_shape_ = x.shape();
    outs_.assign(arch_.nodes.size(), Tensor<T>());
    for (std::size_t i = 0; i < arch_.nodes.size(); ++i) {
      auto src = [&](std::size_t k) -> const Tensor<T>& {
        const int s = inputs_[i][k];
        return s < 0 ? x : outs_[static_cast<std::size_t>(s)];
      };
      const Node& n = arch_.nodes[i];
      if (modules_[i]) {
        outs_[i] = modules_[i]->forward(src(0), mode);
      } else if (const auto* a = std::get_if<AddConfig>(&n.config)) {
        Tensor<T> y = src(0);
        for (std::size_t k = 1; k < inputs_[i].size(); ++k) y += src(k);
        outs_[i] = a->relu ? relu(y) : std::move(y);
      } else {
        std::vector<const Tensor<T>*> parts;
        for (std::size_t k = 0; k < inputs_[i].size(); ++k) parts.push_back(&src(k));
        outs_[i] = concat_channels<T>(std::span<const Tensor<T>* const>(parts));
      }
    }
    return outs_.back();
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    if (arch_.nodes.empty()) return grad_out;
    std::vector<Tensor<T>> grads(arch_.nodes.size());
    Tensor<T> gin(x_shape_);
    grads.back() = grad_out;
    auto route = [&](int s, Tensor<T>&& g) {
      Tensor<T>& dst = s < 0 ? gin : grads[static_cast<std::size_t>(s)];
      if (dst.empty())
        dst = std::move(g);
      else
        dst += g;
    };
    for (std::size_t i = arch_.nodes.size(); i-- > 0;) {
      if (grads[i].empty()) continue;
      const Node& n = arch_.nodes[i];
      Tensor<T> g = std::move(grads[i]);
      if (modules_[i]) {
        route(inputs_[i][0], modules_[i]->backward(g));
      } else if (const auto* a = std::get_if<AddConfig>(&n.config)) {
        if (a->relu) g = relu_backward(outs_[i], g);
        for (int s : inputs_[i]) route(s, Tensor<T>(g));
      } else {
        std::size_t off = 0;
        for (int s : inputs_[i]) {
          const std::size_t c = s < 0 ? arch_.input.c : shapes_[static_cast<std::size_t>(s)].c;
          route(s, slice_channels(g, off, c));
          off += c;
        }
      }
    }
    return gin;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    for (std::size_t i = 0; i < modules_.size(); ++i)
      if (modules_[i]) modules_[i]->visit(join_name(prefix, arch_.nodes[i].name), fn);
  }

  void visit(const ParamVisitor<T>& fn) { visit("", fn); }

  CostTotals cost() const override {
    CostTotals t;
    for (const auto& m : modules_)
      if (m) t += m->cost();
    return t;
  }

  void init(std::uint64_t seed) { init_parameters(*this, seed); }

  void zero_grad() {
    visit([](ParamRef<T>& p) {
      if (p.grad && !p.grad->empty()) std::fill(p.grad->begin(), p.grad->end(), T(0));
    });
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](ParamRef<T>& p) {
      if (p.trainable()) n += p.value->size();
    });
    return n;
  }

  const ArchSpec& arch() const { return arch_; }
  std::size_t size() const { return arch_.nodes.size(); }
  const Node& node(std::size_t i) const { return arch_.nodes.at(i); }
  const Shape& node_shape(std::size_t i) const { return shapes_.at(i); }
  Module<T>* module(std::size_t i) { return modules_.at(i).get(); }
  const Module<T>* module(std::size_t i) const { return modules_.at(i).get(); }
  Module<T>* module(const std::string& name) { return modules_.at(arch_.index_of(name)).get(); }

  /// Output of a node from the most recent forward pass.
  const Tensor<T>& output_of(const std::string& name) const {
    const std::size_t i = arch_.index_of(name);
    if (i >= outs_.size() || outs_[i].empty())
      throw ConfigError("node '" + name + "' has no cached output; run forward first");
    return outs_[i];
  }

 private:
  ArchSpec arch_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<int>> inputs_;
  std::vector<ModulePtr<T>> modules_;
  std::vector<Tensor<T>> outs_;
  Shape x_shape_{};
};

}  // namespace ghostforge
