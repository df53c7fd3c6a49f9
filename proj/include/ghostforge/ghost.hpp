// SPDX-License-Identifier: Apache-2.0
//
// C-Ghost module, squeeze-and-excite gate and the C-Ghost bottleneck.
#pragma once

#include <memory>
#include <string>

#include "ghostforge/module.hpp"

namespace ghostforge {

/// Primary convolution producing m = ceil(n / s) intrinsic maps, followed by a
/// depthwise d x d convolution producing m (s - 1) ghost maps from them.
/// Output = concat(intrinsic, ghost) truncated to n channels. Ghost maps are
/// grouped by the intrinsic channel that generates them.
template <class T>
class GhostModule final : public Module<T> {
 public:
  GhostModule(const ConvConfig& cfg, const Shape& in) : n_(cfg.out), s_(cfg.ghost.s) {
    if (n_ < 1) throw ConfigError("ghost module: out_channels must be >= 1");
    if (s_ < 1) throw ConfigError("ghost module: ratio s must be >= 1");
    if (cfg.ghost.d % 2 == 0) throw ConfigError("ghost module: cheap kernel d must be odd");
    if (!cfg.bn) throw ConfigError("ghost module: requires batch normalization");
    if (cfg.depthwise || cfg.groups != 1) throw ConfigError("ghost module: primary convolution must be dense");
    m_ = (n_ + s_ - 1) / s_;
    ConvConfig primary = cfg;
    primary.out = m_;
    primary.ghost = {};
    primary_ = std::make_unique<ConvUnit<T>>(primary, in);
    const Shape mid = primary_->out_shape();
    if (s_ > 1) {
      ConvConfig cheap;
      cheap.out = m_ * (s_ - 1);
      cheap.kernel = cfg.ghost.d;
      cheap.stride = 1;
      cheap.groups = m_;
      cheap.bn = true;
      cheap.relu = cfg.relu;
      cheap_ = std::make_unique<ConvUnit<T>>(cheap, mid);
    }
    this->in_ = in;
    this->out_ = chw(n_, mid.h, mid.w);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> y1 = primary_->forward(x, mode);
    if (!cheap_) return y1;
    Tensor<T> y2 = cheap_->forward(y1, mode);
    Tensor<T> full = concat_channels<T>({&y1, &y2});
    return full.c() == n_ ? full : slice_channels(full, 0, n_);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    expect_axis("GhostModule::backward", "channels", n_, grad_out.c());
    if (!cheap_) return primary_->backward(grad_out);
    Tensor<T> g1 = slice_channels(grad_out, 0, m_);
    Tensor<T> g2(grad_out.n(), m_ * (s_ - 1), grad_out.h(), grad_out.w());
    accumulate_channels(g2, 0, slice_channels(grad_out, m_, n_ - m_));
    g1 += cheap_->backward(g2);
    return primary_->backward(g1);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    primary_->visit(join_name(prefix, "primary"), fn);
    if (cheap_) cheap_->visit(join_name(prefix, "cheap"), fn);
  }

  CostTotals cost() const override {
    CostTotals t = primary_->cost();
    if (cheap_) t += cheap_->cost();
    return t;
  }

  std::size_t intrinsic_channels() const { return m_; }
  ConvUnit<T>& primary() { return *primary_; }
  ConvUnit<T>* cheap() { return cheap_.get(); }

 private:
  std::size_t n_;
  std::size_t s_;
  std::size_t m_ = 0;
  std::unique_ptr<ConvUnit<T>> primary_;
  std::unique_ptr<ConvUnit<T>> cheap_;
};

/// Ghost module when `cfg.ghost` is enabled, otherwise conv + BN + ReLU.
template <class T>
ModulePtr<T> make_conv_module(const ConvConfig& cfg, const Shape& in) {
  if (cfg.ghost.enabled()) return std::make_unique<GhostModule<T>>(cfg, in);
  return std::make_unique<ConvUnit<T>>(cfg, in);
}

/// y = x * hard_sigmoid(FC2(relu(FC1(avgpool(x))))) per channel.
template <class T>
class SqueezeExcite final : public Module<T> {
 public:
  SqueezeExcite(const Shape& in, std::size_t reduced) : reduced_(reduced) {
    if (reduced < 1) throw ConfigError("squeeze-excite: reduced width must be >= 1");
    this->in_ = in;
    this->out_ = in;
    w1_ = Tensor<T>(reduced, in.c, 1, 1);
    b1_.assign(reduced, T(0));
    w2_ = Tensor<T>(in.c, reduced, 1, 1);
    b2_.assign(in.c, T(0));
  }

  /// Default reduction: channels / 4 rounded to a multiple of 4.
  static std::size_t default_reduced(std::size_t channels) {
    return make_divisible4(static_cast<double>(channels) / 4.0);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->check_input("SqueezeExcite", x);
    x_ = x;
    pooled_ = global_avg_pool(x);
    hidden_ = relu(fully_connected(pooled_, w1_, std::span<const T>(b1_)));
    logits_ = fully_connected(hidden_, w2_, std::span<const T>(b2_));
    gate_ = hard_sigmoid(logits_);
    return scale_channels(x, gate_);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> gx = scale_channels(grad_out, gate_);
    Tensor<T> ggate = Tensor<T>::matrix(x_.n(), x_.c());
    const std::size_t P = x_.h() * x_.w();
    for (std::size_t n = 0; n < x_.n(); ++n)
      for (std::size_t c = 0; c < x_.c(); ++c) {
        const T* gp = grad_out.plane(n, c);
        const T* xp = x_.plane(n, c);
        T acc = T(0);
        for (std::size_t i = 0; i < P; ++i) acc += gp[i] * xp[i];
        ggate(n, c, 0, 0) = acc;
      }
    Tensor<T> glogits = hard_sigmoid_backward(logits_, ggate);
    auto l2 = fully_connected_backward(hidden_, w2_, glogits);
    accumulate_grad(w2_grad_, l2.weights.vec());
    accumulate_grad(b2_grad_, l2.bias);
    Tensor<T> ghidden = relu_backward(hidden_, l2.input);
    auto l1 = fully_connected_backward(pooled_, w1_, ghidden);
    accumulate_grad(w1_grad_, l1.weights.vec());
    accumulate_grad(b1_grad_, l1.bias);
    gx += global_avg_pool_backward(x_.shape(), l1.input);
    return gx;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    ParamRef<T> refs[] = {
        {join_name(prefix, "fc1.weight"), &w1_.vec(), &w1_grad_, w1_.shape(), ParamRole::Weight, this->in_.c},
        {join_name(prefix, "fc1.bias"), &b1_, &b1_grad_, chw(reduced_, 1, 1), ParamRole::Bias, 0},
        {join_name(prefix, "fc2.weight"), &w2_.vec(), &w2_grad_, w2_.shape(), ParamRole::Weight, reduced_},
        {join_name(prefix, "fc2.bias"), &b2_, &b2_grad_, chw(this->in_.c, 1, 1), ParamRole::Bias, 0},
    };
    for (auto& r : refs) fn(r);
  }

  CostTotals cost() const override {
    const std::uint64_t w = w1_.size() + w2_.size();
    return {w + b1_.size() + b2_.size(), w, 0, 0};
  }

  Tensor<T>& fc1_weight() { return w1_; }
  std::vector<T>& fc1_bias() { return b1_; }
  Tensor<T>& fc2_weight() { return w2_; }
  std::vector<T>& fc2_bias() { return b2_; }

 private:
  std::size_t reduced_;
  Tensor<T> w1_, w2_;
  std::vector<T> b1_, b2_;
  std::vector<T> w1_grad_, w2_grad_, b1_grad_, b2_grad_;
  Tensor<T> x_, pooled_, hidden_, logits_, gate_;
};

/// Two stacked ghost modules (the second without ReLU), an optional strided
/// depthwise convolution between them, optional SE, and a residual shortcut.
template <class T>
class GhostBottleneck final : public Module<T> {
 public:
  GhostBottleneck(const GhostBottleneckConfig& cfg, const Shape& in) {
    if (cfg.stride < 1) throw ConfigError("ghost bottleneck: stride must be >= 1");
    if (cfg.exp < 1 || cfg.out < 1) throw ConfigError("ghost bottleneck: widths must be >= 1");
    this->in_ = in;
    const GhostParams ghost{cfg.s, cfg.d};

    ConvConfig expand;
    expand.out = cfg.exp;
    expand.kernel = 1;
    expand.ghost = ghost;
    gm1_ = make_conv_module<T>(expand, in);
    Shape mid = gm1_->out_shape();

    if (cfg.stride > 1) {
      ConvConfig dw;
      dw.out = cfg.exp;
      dw.kernel = cfg.dw_kernel;
      dw.stride = cfg.stride;
      dw.depthwise = true;
      dw.relu = false;
      dw_ = std::make_unique<ConvUnit<T>>(dw, mid);
      mid = dw_->out_shape();
    }
    if (cfg.se) se_ = std::make_unique<SqueezeExcite<T>>(mid, SqueezeExcite<T>::default_reduced(cfg.exp));

    ConvConfig project;
    project.out = cfg.out;
    project.kernel = 1;
    project.relu = false;
    project.ghost = ghost;
    gm2_ = make_conv_module<T>(project, mid);
    this->out_ = gm2_->out_shape();

    if (cfg.stride != 1 || in.c != cfg.out) {
      ConvConfig sdw;
      sdw.out = in.c;
      sdw.kernel = cfg.dw_kernel;
      sdw.stride = cfg.stride;
      sdw.depthwise = true;
      sdw.relu = false;
      sc_dw_ = std::make_unique<ConvUnit<T>>(sdw, in);
      ConvConfig spw;
      spw.out = cfg.out;
      spw.kernel = 1;
      spw.relu = false;
      sc_pw_ = std::make_unique<ConvUnit<T>>(spw, sc_dw_->out_shape());
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input("GhostBottleneck", x);
    Tensor<T> y = gm1_->forward(x, mode);
    if (dw_) y = dw_->forward(y, mode);
    if (se_) y = se_->forward(y, mode);
    y = gm2_->forward(y, mode);
    if (sc_dw_) {
      y += sc_pw_->forward(sc_dw_->forward(x, mode), mode);
    } else {
      y += x;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> g = gm2_->backward(grad_out);
    if (se_) g = se_->backward(g);
    if (dw_) g = dw_->backward(g);
    g = gm1_->backward(g);
    if (sc_dw_) {
      g += sc_dw_->backward(sc_pw_->backward(grad_out));
    } else {
      g += grad_out;
    }
    return g;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    gm1_->visit(join_name(prefix, "ghost1"), fn);
    if (dw_) dw_->visit(join_name(prefix, "dw"), fn);
    if (se_) se_->visit(join_name(prefix, "se"), fn);
    gm2_->visit(join_name(prefix, "ghost2"), fn);
    if (sc_dw_) {
      sc_dw_->visit(join_name(prefix, "shortcut.dw"), fn);
      sc_pw_->visit(join_name(prefix, "shortcut.pw"), fn);
    }
  }

  CostTotals cost() const override {
    CostTotals t = gm1_->cost();
    if (dw_) t += dw_->cost();
    if (se_) t += se_->cost();
    t += gm2_->cost();
    if (sc_dw_) {
      t += sc_dw_->cost();
      t += sc_pw_->cost();
    }
    return t;
  }

 private:
  ModulePtr<T> gm1_;
  std::unique_ptr<ConvUnit<T>> dw_;
  std::unique_ptr<SqueezeExcite<T>> se_;
  ModulePtr<T> gm2_;
  std::unique_ptr<ConvUnit<T>> sc_dw_;
  std::unique_ptr<ConvUnit<T>> sc_pw_;
};

// ---------------------------------------------------------------------------
// Closed-form ratios for replacing an ordinary k x k convolution (c inputs,
// n outputs) by a ghost module with ratio s and cheap kernel d.

inline void require_at_least_one(const char* op, std::initializer_list<double> values) {
  for (double v : values)
    if (!(v >= 1.0)) throw ConfigError(std::string(op) + ": all inputs must be >= 1");
}

/// c k^2 / (c k^2 / s + (s - 1) d^2 / s)
inline double speedup_ratio_rs(double c, double k, double d, double s) {
  require_at_least_one("speedup_ratio_rs", {c, k, d, s});
  return (c * k * k) / ((1.0 / s) * c * k * k + ((s - 1.0) / s) * d * d);
}

/// n c k^2 / ((n / s) c k^2 + (s - 1) (n / s) d^2)
inline double compression_ratio_rc(double c, double k, double d, double s, double n) {
  require_at_least_one("compression_ratio_rc", {c, k, d, s, n});
  return (n * c * k * k) / ((n / s) * c * k * k + (s - 1.0) * (n / s) * d * d);
}

}  // namespace ghostforge
