// SPDX-License-Identifier: Apache-2.0
//
// G-Ghost stage: a thin complicated path, a cheap branch reading the first
// block's output, and an optional mix that injects pooled intermediate
// features into the cheap branch.
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ghostforge/blocks.hpp"

namespace ghostforge {

template <class T>
ModulePtr<T> make_block(const BlockConfig& cfg, const Shape& in) {
  return std::visit(
      [&](const auto& c) -> ModulePtr<T> {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, ConvConfig>) return make_conv_module<T>(c, in);
        if constexpr (std::is_same_v<C, BasicBlockConfig>) return std::make_unique<BasicBlock<T>>(c, in);
        if constexpr (std::is_same_v<C, BottleneckConfig>) return std::make_unique<Bottleneck<T>>(c, in);
        if constexpr (std::is_same_v<C, GhostBottleneckConfig>)
          return std::make_unique<GhostBottleneck<T>>(c, in);
        if constexpr (std::is_same_v<C, GGBlockConfig>) return std::make_unique<GGBlock<T>>(c, in);
      },
      cfg);
}

/// tau = W avgpool(concat(Z)) + b, one value per ghost channel.
template <class T>
class Mix {
 public:
  Mix() = default;
  Mix(std::size_t aggregate_width, std::size_t ghost_width)
      : weight_(ghost_width, aggregate_width, 1, 1), bias_(ghost_width, T(0)) {}

  std::size_t aggregate_width() const { return weight_.c(); }
  std::size_t ghost_width() const { return weight_.n(); }

  Tensor<T> forward(std::span<const Tensor<T>* const> intermediates) {
    std::size_t total = 0;
    for (const auto* z : intermediates) total += z->c();
    expect_axis("mix_forward", "aggregate_width", aggregate_width(), total);
    pooled_ = global_avg_pool(concat_channels<T>(intermediates));
    plane_ = intermediates.front()->h() * intermediates.front()->w();
    return fully_connected(pooled_, weight_, std::span<const T>(bias_));
  }

  /// Returns d loss / d pooled Z, shape (N, c').
  Tensor<T> backward(const Tensor<T>& grad_tau) {
    auto g = fully_connected_backward(pooled_, weight_, grad_tau);
    accumulate_grad(weight_grad_, g.weights.vec());
    accumulate_grad(bias_grad_, g.bias);
    return std::move(g.input);
  }

  std::size_t plane() const { return plane_; }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    ParamRef<T> w{join_name(prefix, "weight"), &weight_.vec(), &weight_grad_, weight_.shape(),
                  ParamRole::Weight, aggregate_width()};
    ParamRef<T> b{join_name(prefix, "bias"), &bias_, &bias_grad_, chw(bias_.size(), 1, 1), ParamRole::Bias, 0};
    fn(w);
    fn(b);
  }

  CostTotals cost() const { return {weight_.size() + bias_.size(), weight_.size(), 0, 0}; }

  Tensor<T>& weight() { return weight_; }
  std::vector<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_;
  std::vector<T> bias_;
  std::vector<T> weight_grad_;
  std::vector<T> bias_grad_;
  Tensor<T> pooled_;
  std::size_t plane_ = 1;
};

template <class T>
class GGhostStage final : public Module<T> {
 public:
  GGhostStage(const GGhostStageConfig& cfg, const Shape& in) : cfg_(cfg) {
    const std::size_t n = cfg.blocks.size();
    if (n == 0) throw ConfigError("gghost_stage: needs at least one block");
    c_ = block_out(cfg.blocks.front());
    for (std::size_t i = 1; i < n; ++i) {
      if (block_stride(cfg.blocks[i]) != 1) throw ConfigError("gghost_stage: only the first block may stride");
      if (block_out(cfg.blocks[i]) != c_) throw ConfigError("gghost_stage: all blocks must share the output width");
    }
    cc_ = complicated_width(c_, cfg.lambda);
    cg_ = c_ - cc_;
    if (cc_ < 1) throw ConfigError("gghost_stage: lambda leaves no complicated channels");
    if (cg_ > 0 && cfg.cheap == CheapKind::None)
      throw ConfigError("gghost_stage: cheap operation 'none' contradicts lambda > 0");
    if (cg_ > 0 && cfg.layout == StageLayout::Literal && n < 2)
      throw ConfigError("gghost_stage: literal layout needs at least 2 blocks when lambda > 0");
    if (cg_ > 0 && cfg.layout == StageLayout::Tail && n < 2)
      throw ConfigError("gghost_stage: tail layout needs at least 2 blocks when lambda > 0");

    this->in_ = in;
    first_ = make_block<T>(cfg.blocks.front(), in);
    const Shape y1 = first_->out_shape();

    if (cfg.layout == StageLayout::Tail) {
      Shape s = chw(cc_, y1.h, y1.w);
      for (std::size_t i = 1; i + 1 < n; ++i) {
        path_.push_back(make_block<T>(with_out_width(cfg.blocks[i], cc_), s));
        s = path_.back()->out_shape();
      }
      if (n >= 2) tail_ = make_block<T>(cfg.blocks.back(), y1);
    } else {
      Shape s = y1;
      for (std::size_t i = 1; i < n; ++i) {
        path_.push_back(make_block<T>(with_out_width(cfg.blocks[i], cc_), s));
        s = path_.back()->out_shape();
      }
    }

    if (cg_ > 0) {
      if (cfg.cheap != CheapKind::Identity) {
        ConvConfig cheap;
        cheap.out = cg_;
        cheap.kernel = cheap_kernel(cfg.cheap);
        cheap.relu = false;
        cheap_ = std::make_unique<ConvUnit<T>>(cheap, y1);
      }
      if (cfg.mix) {
        if (path_.empty()) throw ConfigError("gghost_stage: mix needs at least one complicated-path block");
        mix_ = std::make_unique<Mix<T>>(path_.size() * cc_, cg_);
      }
    }
    this->out_ = tail_ ? tail_->out_shape() : chw(c_, y1.h, y1.w);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input("GGhostStage", x);
    y1_ = first_->forward(x, mode);
    const bool tail = cfg_.layout == StageLayout::Tail;
    Tensor<T> e = tail && cg_ > 0 ? slice_channels(y1_, 0, cc_) : y1_;
    z_.clear();
    for (auto& b : path_) {
      e = b->forward(e, mode);
      if (mix_) z_.push_back(e);
    }
    Tensor<T> out;
    if (cg_ == 0) {
      out = std::move(e);
    } else {
      Tensor<T> g = cheap_ ? cheap_->forward(y1_, mode) : slice_channels(y1_, c_ - cg_, cg_);
      if (mix_) {
        std::vector<const Tensor<T>*> parts;
        for (const auto& z : z_) parts.push_back(&z);
        g = add_broadcast_channel(g, mix_->forward(parts));
      }
      ghost_ = relu(g);
      out = concat_channels<T>({&e, &ghost_});
    }
    if (tail_) out = tail_->forward(out, mode);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> g = tail_ ? tail_->backward(grad_out) : grad_out;
    Tensor<T> ge = cg_ > 0 ? slice_channels(g, 0, cc_) : g;
    Tensor<T> gy1(y1_.shape());
    std::vector<Tensor<T>> gz;
    if (cg_ > 0) {
      Tensor<T> gpre = relu_backward(ghost_, slice_channels(g, cc_, cg_));
      if (mix_) {
        Tensor<T> gpool = mix_->backward(add_broadcast_channel_backward(gpre));
        const T inv = T(1) / static_cast<T>(mix_->plane());
        std::size_t off = 0;
        for (const auto& z : z_) {
          Tensor<T> gzi(z.shape());
          const std::size_t P = z.h() * z.w();
          for (std::size_t n = 0; n < z.n(); ++n)
            for (std::size_t ch = 0; ch < z.c(); ++ch) {
              const T v = gpool(n, off + ch, 0, 0) * inv;
              T* p = gzi.plane(n, ch);
              for (std::size_t i = 0; i < P; ++i) p[i] = v;
            }
          off += z.c();
          gz.push_back(std::move(gzi));
        }
      }
      if (cheap_) {
        gy1 += cheap_->backward(gpre);
      } else {
        accumulate_channels(gy1, c_ - cg_, gpre);
      }
    }
    for (std::size_t i = path_.size(); i-- > 0;) {
      if (!gz.empty()) ge += gz[i];
      ge = path_[i]->backward(ge);
    }
    accumulate_channels(gy1, 0, ge);
    return first_->backward(gy1);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    first_->visit(join_name(prefix, "block1"), fn);
    for (std::size_t i = 0; i < path_.size(); ++i)
      path_[i]->visit(join_name(prefix, "block" + std::to_string(i + 2)), fn);
    if (tail_) tail_->visit(join_name(prefix, "block" + std::to_string(cfg_.blocks.size())), fn);
    if (cheap_) cheap_->visit(join_name(prefix, "cheap"), fn);
    if (mix_) mix_->visit(join_name(prefix, "mix"), fn);
  }

  CostTotals cost() const override {
    CostTotals t = first_->cost();
    for (const auto& b : path_) t += b->cost();
    if (tail_) t += tail_->cost();
    if (cheap_) t += cheap_->cost();
    if (mix_) t += mix_->cost();
    return t;
  }

  std::size_t complicated_channels() const { return cc_; }
  std::size_t ghost_channels() const { return cg_; }
  Module<T>& first() { return *first_; }
  std::size_t path_length() const { return path_.size(); }
  Module<T>& path(std::size_t i) { return *path_.at(i); }
  Module<T>* tail() { return tail_.get(); }
  ConvUnit<T>* cheap() { return cheap_.get(); }
  Mix<T>* mix() { return mix_.get(); }

 private:
  GGhostStageConfig cfg_;
  std::size_t c_ = 0;
  std::size_t cc_ = 0;
  std::size_t cg_ = 0;
  ModulePtr<T> first_;
  std::vector<ModulePtr<T>> path_;
  ModulePtr<T> tail_;
  std::unique_ptr<ConvUnit<T>> cheap_;
  std::unique_ptr<Mix<T>> mix_;
  Tensor<T> y1_;
  Tensor<T> ghost_;
  std::vector<Tensor<T>> z_;
};

struct ReductionRatios {
  double flops = 1.0;
  double params = 1.0;
};

/// Closed-form stage reduction: block 1 at full cost, block 2 scaled by
/// (1 - lambda), blocks 3..n by (1 - lambda)^2, plus the cheap branch.
inline ReductionRatios stage_reduction_ratios(const std::vector<double>& per_block_flops,
                                              const std::vector<double>& per_block_params, double lambda,
                                              double cheap_flops, double cheap_params) {
  if (per_block_flops.empty() || per_block_flops.size() != per_block_params.size())
    throw ConfigError("stage_reduction_ratios: need equally long, non-empty per-block lists");
  if (lambda < 0.0 || cheap_flops < 0.0 || cheap_params < 0.0)
    throw ConfigError("stage_reduction_ratios: negative input");
  auto ratio = [&](const std::vector<double>& v, double cheap) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] < 0.0) throw ConfigError("stage_reduction_ratios: negative input");
      num += v[i];
      const double scale = i == 0 ? 1.0 : i == 1 ? (1.0 - lambda) : (1.0 - lambda) * (1.0 - lambda);
      den += scale * v[i];
    }
    return num / (den + cheap);
  };
  return {ratio(per_block_flops, cheap_flops), ratio(per_block_params, cheap_params)};
}

}  // namespace ghostforge
