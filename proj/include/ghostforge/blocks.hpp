// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "ghostforge/ghost.hpp"

namespace ghostforge {

namespace detail {

inline ConvConfig unit(std::size_t out, std::size_t kernel, std::size_t stride, bool relu, GhostParams ghost) {
  ConvConfig c;
  c.out = out;
  c.kernel = kernel;
  c.stride = stride;
  c.relu = relu;
  c.ghost = ghost;
  return c;
}

}  // namespace detail

/// Residual body + optional projection shortcut + ReLU after the add.
template <class T>
class ResidualBlock : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input("ResidualBlock", x);
    Tensor<T> y = x;
    for (auto& m : body_) y = m->forward(y, mode);
    if (residual_) {
      if (shortcut_) {
        y += shortcut_->forward(x, mode);
      } else {
        y += x;
      }
    }
    y_ = relu(y);
    return y_;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const Tensor<T> g0 = relu_backward(y_, grad_out);
    Tensor<T> g = g0;
    for (auto it = body_.rbegin(); it != body_.rend(); ++it) g = (*it)->backward(g);
    if (residual_) {
      if (shortcut_) {
        g += shortcut_->backward(g0);
      } else {
        g += g0;
      }
    }
    return g;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    for (std::size_t i = 0; i < body_.size(); ++i) body_[i]->visit(join_name(prefix, names_[i]), fn);
    if (shortcut_) shortcut_->visit(join_name(prefix, "shortcut"), fn);
  }

  CostTotals cost() const override {
    CostTotals t;
    for (const auto& m : body_) t += m->cost();
    if (shortcut_) t += shortcut_->cost();
    return t;
  }

 protected:
  void push(const std::string& name, ModulePtr<T> m) {
    names_.push_back(name);
    body_.push_back(std::move(m));
  }
  const Shape& tail_shape() const { return body_.empty() ? this->in_ : body_.back()->out_shape(); }

  std::vector<std::string> names_;
  std::vector<ModulePtr<T>> body_;
  ModulePtr<T> shortcut_;
  bool residual_ = true;
  Tensor<T> y_;
};

/// conv3x3(stride) + BN + ReLU, conv3x3 + BN, add shortcut, ReLU.
template <class T>
class BasicBlock final : public ResidualBlock<T> {
 public:
  BasicBlock(const BasicBlockConfig& cfg, const Shape& in) {
    if (cfg.out < 1 || cfg.stride < 1) throw ConfigError("basic_block: out and stride must be >= 1");
    this->in_ = in;
    this->push("conv1", make_conv_module<T>(detail::unit(cfg.out, 3, cfg.stride, true, cfg.ghost), in));
    this->push("conv2", make_conv_module<T>(detail::unit(cfg.out, 3, 1, false, cfg.ghost), this->tail_shape()));
    if (cfg.stride != 1 || in.c != cfg.out)
      this->shortcut_ = make_conv_module<T>(detail::unit(cfg.out, 1, cfg.stride, false, cfg.ghost), in);
    this->out_ = this->tail_shape();
  }
};

/// 1x1 reduce, 3x3 (stride), 1x1 expand, add shortcut, ReLU.
template <class T>
class Bottleneck final : public ResidualBlock<T> {
 public:
  Bottleneck(const BottleneckConfig& cfg, const Shape& in) {
    if (cfg.mid < 1 || cfg.out < 1 || cfg.stride < 1)
      throw ConfigError("bottleneck: mid, out and stride must be >= 1");
    this->in_ = in;
    this->push("conv1", make_conv_module<T>(detail::unit(cfg.mid, 1, 1, true, cfg.ghost), in));
    this->push("conv2", make_conv_module<T>(detail::unit(cfg.mid, 3, cfg.stride, true, cfg.ghost), this->tail_shape()));
    this->push("conv3", make_conv_module<T>(detail::unit(cfg.out, 1, 1, false, cfg.ghost), this->tail_shape()));
    if (cfg.stride != 1 || in.c != cfg.out)
      this->shortcut_ = make_conv_module<T>(detail::unit(cfg.out, 1, cfg.stride, false, cfg.ghost), in);
    this->out_ = this->tail_shape();
  }
};

/// G-GhostNet residual bottleneck: 1x1 expand (x expansion) + BN + ReLU,
/// dense 3x3 (stride) + BN + ReLU, SE, 1x1 project + BN, identity add when
/// shapes match, ReLU.
template <class T>
class GGBlock final : public ResidualBlock<T> {
 public:
  GGBlock(const GGBlockConfig& cfg, const Shape& in) {
    if (cfg.out < 1 || cfg.stride < 1 || cfg.expansion < 1)
      throw ConfigError("gg_block: out, stride and expansion must be >= 1");
    this->in_ = in;
    const std::size_t mid = cfg.expansion * in.c;
    this->push("expand", make_conv_module<T>(detail::unit(mid, 1, 1, true, cfg.ghost), in));
    this->push("conv", make_conv_module<T>(detail::unit(mid, 3, cfg.stride, true, cfg.ghost), this->tail_shape()));
    if (cfg.se)
      this->push("se", std::make_unique<SqueezeExcite<T>>(this->tail_shape(), SqueezeExcite<T>::default_reduced(mid)));
    this->push("project", make_conv_module<T>(detail::unit(cfg.out, 1, 1, false, cfg.ghost), this->tail_shape()));
    this->residual_ = cfg.stride == 1 && in.c == cfg.out;
    this->out_ = this->tail_shape();
  }
};

}  // namespace ghostforge
