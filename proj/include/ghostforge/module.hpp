// SPDX-License-Identifier: Apache-2.0
//
// Stateful layer objects. A module owns its parameters, caches what its last
// forward call needs, and accumulates parameter gradients on backward.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ghostforge/config.hpp"
#include "ghostforge/ops.hpp"
#include "ghostforge/tensor.hpp"

namespace ghostforge {

enum class Mode { Train, Eval };

enum class ParamRole { Weight, Bias, BnScale, BnShift, RunningMean, RunningVar };

/// Named view of one parameter or buffer. `grad` is null for buffers and may
/// point to an empty vector before the first backward pass.
template <class T>
struct ParamRef {
  std::string name;
  std::vector<T>* value = nullptr;
  std::vector<T>* grad = nullptr;
  Shape shape;
  ParamRole role = ParamRole::Weight;
  std::size_t fan_in = 0;

  bool trainable() const { return grad != nullptr; }
};

template <class T>
using ParamVisitor = std::function<void(ParamRef<T>&)>;

/// Parameter, FLOP (multiply-accumulate) and activation totals.
struct CostTotals {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t activations = 0;
  std::uint64_t conv_weights = 0;  // convolution kernels only, no bias or BN

  CostTotals& operator+=(const CostTotals& o) {
    params += o.params;
    flops += o.flops;
    activations += o.activations;
    conv_weights += o.conv_weights;
    return *this;
  }
  bool operator==(const CostTotals&) const = default;
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <class T>
void accumulate_grad(std::vector<T>& dst, const std::vector<T>& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

/// Shapes carried by modules use n = 1; only (C, H, W) matter.
inline Shape chw(std::size_t c, std::size_t h, std::size_t w) { return {1, c, h, w}; }

template <class T>
class Module {
 public:
  virtual ~Module() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void visit(const std::string& prefix, const ParamVisitor<T>& fn) = 0;
  virtual CostTotals cost() const = 0;

  const Shape& in_shape() const { return in_; }
  const Shape& out_shape() const { return out_; }

 protected:
  void check_input(const char* op, const Tensor<T>& x) const {
    expect_axis(op, "channels", in_.c, x.c());
  }

  Shape in_{};
  Shape out_{};
};

template <class T>
using ModulePtr = std::unique_ptr<Module<T>>;

// ---------------------------------------------------------------------------

template <class T>
class Conv final : public Module<T> {
 public:
  Conv(const ConvSpec& spec, const Shape& in) : spec_(spec) {
    spec_.validate();
    expect_axis("Conv", "channels", spec_.in_channels, in.c);
    this->in_ = in;
    this->out_ = chw(spec_.out_channels, spec_.out_extent(in.h), spec_.out_extent(in.w));
    weight_ = Tensor<T>(spec_.weight_shape());
    if (spec_.has_bias) bias_.assign(spec_.out_channels, T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->check_input("Conv", x);
    x_ = x;
    return conv2d_forward(x, spec_, weight_, std::span<const T>(bias_));
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto g = conv2d_backward(x_, spec_, weight_, grad_out);
    accumulate_grad(weight_grad_, g.weights.vec());
    if (spec_.has_bias) accumulate_grad(bias_grad_, g.bias);
    return std::move(g.input);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    ParamRef<T> w{join_name(prefix, "weight"), &weight_.vec(), &weight_grad_, weight_.shape(),
                  ParamRole::Weight, spec_.in_per_group() * spec_.kernel * spec_.kernel};
    fn(w);
    if (spec_.has_bias) {
      ParamRef<T> b{join_name(prefix, "bias"), &bias_, &bias_grad_, chw(spec_.out_channels, 1, 1),
                    ParamRole::Bias, 0};
      fn(b);
    }
  }

  CostTotals cost() const override {
    const std::uint64_t plane = this->out_.h * this->out_.w;
    const std::uint64_t wsize = weight_.size();
    CostTotals t;
    t.conv_weights = wsize;
    t.params = wsize + bias_.size();
    t.flops = wsize * plane;
    t.activations = spec_.out_channels * plane;
    return t;
  }

  const ConvSpec& spec() const { return spec_; }
  Tensor<T>& weight() { return weight_; }
  std::vector<T>& bias() { return bias_; }

 private:
  ConvSpec spec_;
  Tensor<T> weight_;
  std::vector<T> bias_;
  std::vector<T> weight_grad_;
  std::vector<T> bias_grad_;
  Tensor<T> x_;
};

template <class T>
class BatchNorm final : public Module<T> {
 public:
  explicit BatchNorm(const Shape& in) : state_(in.c) {
    this->in_ = in;
    this->out_ = in;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    this->check_input("BatchNorm", x);
    return batchnorm_forward(x, state_, mode == Mode::Train, &cache_);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto g = batchnorm_backward(grad_out, cache_, std::span<const T>(state_.gamma));
    accumulate_grad(gamma_grad_, g.gamma);
    accumulate_grad(beta_grad_, g.beta);
    return std::move(g.input);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    const Shape s = chw(state_.channels(), 1, 1);
    ParamRef<T> refs[] = {
        {join_name(prefix, "gamma"), &state_.gamma, &gamma_grad_, s, ParamRole::BnScale, 0},
        {join_name(prefix, "beta"), &state_.beta, &beta_grad_, s, ParamRole::BnShift, 0},
        {join_name(prefix, "running_mean"), &state_.running_mean, nullptr, s, ParamRole::RunningMean, 0},
        {join_name(prefix, "running_var"), &state_.running_var, nullptr, s, ParamRole::RunningVar, 0},
    };
    for (auto& r : refs) fn(r);
  }

  CostTotals cost() const override { return {2 * state_.channels(), 0, 0, 0}; }

  BatchNormState<T>& state() { return state_; }

 private:
  BatchNormState<T> state_;
  BatchNormCache<T> cache_;
  std::vector<T> gamma_grad_;
  std::vector<T> beta_grad_;
};

/// Ordinary convolution followed by optional BN and optional ReLU.
template <class T>
class ConvUnit final : public Module<T> {
 public:
  ConvUnit(const ConvConfig& cfg, const Shape& in)
      : conv_(ConvSpec{in.c, cfg.out, cfg.kernel, cfg.stride, cfg.pad(), cfg.groups_for(in.c), cfg.bias},
              in),
        relu_(cfg.relu) {
    this->in_ = in;
    this->out_ = conv_.out_shape();
    if (cfg.bn) bn_ = std::make_unique<BatchNorm<T>>(this->out_);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> y = conv_.forward(x, mode);
    if (bn_) y = bn_->forward(y, mode);
    if (relu_) {
      y = relu(y);
      y_ = y;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> g = relu_ ? relu_backward(y_, grad_out) : grad_out;
    if (bn_) g = bn_->backward(g);
    return conv_.backward(g);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    conv_.visit(join_name(prefix, "conv"), fn);
    if (bn_) bn_->visit(join_name(prefix, "bn"), fn);
  }

  CostTotals cost() const override {
    CostTotals t = conv_.cost();
    if (bn_) t += bn_->cost();
    return t;
  }

  Conv<T>& conv() { return conv_; }
  BatchNorm<T>* bn() { return bn_.get(); }

 private:
  Conv<T> conv_;
  std::unique_ptr<BatchNorm<T>> bn_;
  bool relu_;
  Tensor<T> y_;
};

/// Fully connected layer over the flattened (C, H, W) input, with optional BN
/// and ReLU. Output shape (C_out, 1, 1).
template <class T>
class Linear final : public Module<T> {
 public:
  Linear(const FcConfig& cfg, const Shape& in) : relu_(cfg.relu) {
    if (cfg.out == 0) throw ConfigError("fc: out must be >= 1");
    this->in_ = in;
    this->out_ = chw(cfg.out, 1, 1);
    in_features_ = in.c * in.h * in.w;
    weight_ = Tensor<T>(cfg.out, in_features_, 1, 1);
    if (cfg.bias) bias_.assign(cfg.out, T(0));
    if (cfg.bn) bn_ = std::make_unique<BatchNorm<T>>(this->out_);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    expect_axis("Linear", "in_features", in_features_, x.c() * x.h() * x.w());
    x_ = x;
    Tensor<T> y = fully_connected(x, weight_, std::span<const T>(bias_));
    if (bn_) y = bn_->forward(y, mode);
    if (relu_) {
      y = relu(y);
      y_ = y;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> g = relu_ ? relu_backward(y_, grad_out) : grad_out;
    if (bn_) g = bn_->backward(g);
    auto lg = fully_connected_backward(x_, weight_, g);
    accumulate_grad(weight_grad_, lg.weights.vec());
    if (!bias_.empty()) accumulate_grad(bias_grad_, lg.bias);
    return std::move(lg.input);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) override {
    ParamRef<T> w{join_name(prefix, "weight"), &weight_.vec(), &weight_grad_, weight_.shape(),
                  ParamRole::Weight, in_features_};
    fn(w);
    if (!bias_.empty()) {
      ParamRef<T> b{join_name(prefix, "bias"), &bias_, &bias_grad_, chw(bias_.size(), 1, 1),
                    ParamRole::Bias, 0};
      fn(b);
    }
    if (bn_) bn_->visit(join_name(prefix, "bn"), fn);
  }

  CostTotals cost() const override {
    CostTotals t{weight_.size() + bias_.size(), weight_.size(), 0, 0};
    if (bn_) t += bn_->cost();
    return t;
  }

  Tensor<T>& weight() { return weight_; }
  std::vector<T>& bias() { return bias_; }

 private:
  std::size_t in_features_ = 0;
  Tensor<T> weight_;
  std::vector<T> bias_;
  std::unique_ptr<BatchNorm<T>> bn_;
  bool relu_;
  std::vector<T> weight_grad_;
  std::vector<T> bias_grad_;
  Tensor<T> x_;
  Tensor<T> y_;
};

template <class T>
class MaxPool final : public Module<T> {
 public:
  MaxPool(const MaxPoolConfig& cfg, const Shape& in) : spec_{cfg.kernel, cfg.stride, cfg.padding} {
    if (cfg.kernel == 0 || cfg.stride == 0) throw ConfigError("max_pool: kernel and stride must be >= 1");
    this->in_ = in;
    this->out_ = chw(in.c, spec_.out_extent(in.h), spec_.out_extent(in.w));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->check_input("MaxPool", x);
    x_shape_ = x.shape();
    return max_pool2d(x, spec_, &argmax_);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    return max_pool2d_backward(x_shape_, argmax_, grad_out);
  }

  void visit(const std::string&, const ParamVisitor<T>&) override {}
  CostTotals cost() const override { return {}; }

 private:
  PoolSpec spec_;
  Shape x_shape_{};
  std::vector<std::size_t> argmax_;
};

template <class T>
class GlobalAvgPool final : public Module<T> {
 public:
  explicit GlobalAvgPool(const Shape& in) {
    this->in_ = in;
    this->out_ = chw(in.c, 1, 1);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    this->check_input("GlobalAvgPool", x);
    x_shape_ = x.shape();
    return global_avg_pool(x);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    return global_avg_pool_backward(x_shape_, grad_out);
  }

  void visit(const std::string&, const ParamVisitor<T>&) override {}
  CostTotals cost() const override { return {}; }

 private:
  Shape x_shape_{};
};

}  // namespace ghostforge
