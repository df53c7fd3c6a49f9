// SPDX-License-Identifier: Apache-2.0
//
// Primitive differentiable operations on (N, C, H, W) tensors. Every function
// here is pure; backward functions take whatever the forward needed and return
// freshly allocated gradients.
#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ghostforge/parallel.hpp"
#include "ghostforge/tensor.hpp"

#ifndef NDEBUG
#define GHOSTFORGE_ASSERT_FINITE(t) assert((t).all_finite())
#else
#define GHOSTFORGE_ASSERT_FINITE(t) ((void)0)
#endif

namespace ghostforge {

// ---------------------------------------------------------------------------
// Convolution

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool has_bias = false;

  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
  bool depthwise() const { return groups > 1 && groups == in_channels; }

  Shape weight_shape() const { return {out_channels, in_per_group(), kernel, kernel}; }

  void validate() const {
    if (in_channels == 0 || out_channels == 0) throw ConfigError("conv: channel counts must be >= 1");
    if (groups == 0 || in_channels % groups != 0 || out_channels % groups != 0)
      throw ConfigError("conv: groups=" + std::to_string(groups) + " must divide in_channels=" +
                        std::to_string(in_channels) + " and out_channels=" +
                        std::to_string(out_channels));
    if (kernel == 0) throw ConfigError("conv: kernel must be >= 1");
    if (stride == 0) throw ConfigError("conv: stride must be >= 1");
  }

  /// Output extent along one spatial axis (floor division, as every mainstream
  /// framework does for strided convolution).
  std::size_t out_extent(std::size_t in) const {
    if (in + 2 * padding < kernel)
      throw ConfigError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                        std::to_string(in + 2 * padding));
    return (in + 2 * padding - kernel) / stride + 1;
  }

  Shape out_shape(const Shape& x) const {
    return {x.n, out_channels, out_extent(x.h), out_extent(x.w)};
  }
};

namespace detail {

// Range of output positions o with 0 <= o*stride + tap - pad < in.
inline void valid_range(std::size_t in, std::size_t out, std::size_t stride, std::size_t tap,
                        std::size_t pad, std::size_t& lo, std::size_t& hi) {
  const long t = static_cast<long>(tap) - static_cast<long>(pad);
  const long s = static_cast<long>(stride);
  long first = t >= 0 ? 0 : (-t + s - 1) / s;
  long last_pos = static_cast<long>(in) - 1 - t;  // o*s <= last_pos
  long last = last_pos < 0 ? -1 : last_pos / s;
  if (last > static_cast<long>(out) - 1) last = static_cast<long>(out) - 1;
  lo = static_cast<std::size_t>(first);
  hi = last < first ? lo : static_cast<std::size_t>(last + 1);
}

inline void check_conv_inputs(const char* op, const Shape& x, const ConvSpec& spec, const Shape& w) {
  spec.validate();
  expect_axis(op, "channels", spec.in_channels, x.c);
  const Shape ws = spec.weight_shape();
  expect_axis(op, "weight.out_channels", ws.n, w.n);
  expect_axis(op, "weight.in_per_group", ws.c, w.c);
  expect_axis(op, "weight.kernel_h", ws.h, w.h);
  expect_axis(op, "weight.kernel_w", ws.w, w.w);
}

}  // namespace detail

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Depthwise convs (one input and one output channel per group) use direct
/// loops; everything else goes through im2col + GEMM. The choice depends only
/// on per-group sizes, so a grouped conv and its per-group slices agree bitwise.
inline bool use_gemm(const ConvSpec& spec) { return spec.in_per_group() > 1 || spec.out_per_group() > 1; }

/// True when the input planes of a group already form the im2col matrix.
inline bool col_is_input(const ConvSpec& spec) { return spec.kernel == 1 && spec.stride == 1 && spec.padding == 0; }

/// Unfolds channels [c0, c0 + icg) of sample n into (icg k k) x (OH OW), zero padded.
template <class T>
void im2col(const Tensor<T>& x, std::size_t n, std::size_t c0, const ConvSpec& spec, std::size_t OH, std::size_t OW,
            std::vector<T>& col) {
  const std::size_t k = spec.kernel, st = spec.stride, pad = spec.padding, W = x.w(), P = OH * OW;
  col.assign(spec.in_per_group() * k * k * P, T(0));
  for (std::size_t icl = 0; icl < spec.in_per_group(); ++icl) {
    const T* ip = x.plane(n, c0 + icl);
    for (std::size_t kh = 0; kh < k; ++kh) {
      std::size_t oh0, oh1;
      valid_range(x.h(), OH, st, kh, pad, oh0, oh1);
      for (std::size_t kw = 0; kw < k; ++kw) {
        std::size_t ow0, ow1;
        valid_range(W, OW, st, kw, pad, ow0, ow1);
        T* row = col.data() + ((icl * k + kh) * k + kw) * P;
        for (std::size_t oh = oh0; oh < oh1; ++oh) {
          const T* irow = ip + (oh * st + kh - pad) * W + kw - pad;
          for (std::size_t ow = ow0; ow < ow1; ++ow) row[oh * OW + ow] = irow[ow * st];
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds the columns back into the input planes.
template <class T>
void col2im_add(const std::vector<T>& col, std::size_t n, std::size_t c0, const ConvSpec& spec, std::size_t OH,
                std::size_t OW, Tensor<T>& gx) {
  const std::size_t k = spec.kernel, st = spec.stride, pad = spec.padding, W = gx.w(), P = OH * OW;
  for (std::size_t icl = 0; icl < spec.in_per_group(); ++icl) {
    T* gp = gx.plane(n, c0 + icl);
    for (std::size_t kh = 0; kh < k; ++kh) {
      std::size_t oh0, oh1;
      valid_range(gx.h(), OH, st, kh, pad, oh0, oh1);
      for (std::size_t kw = 0; kw < k; ++kw) {
        std::size_t ow0, ow1;
        valid_range(W, OW, st, kw, pad, ow0, ow1);
        const T* row = col.data() + ((icl * k + kh) * k + kw) * P;
        for (std::size_t oh = oh0; oh < oh1; ++oh) {
          T* irow = gp + (oh * st + kh - pad) * W + kw - pad;
          for (std::size_t ow = ow0; ow < ow1; ++ow) irow[ow * st] += row[oh * OW + ow];
        }
      }
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weights,
                         std::span<const T> bias = {}) {
  detail::check_conv_inputs("conv2d_forward", x.shape(), spec, weights.shape());
  if (spec.has_bias) expect_axis("conv2d_forward", "bias", spec.out_channels, bias.size());
  const Shape os = spec.out_shape(x.shape());
  Tensor<T> out(os);
  const std::size_t k = spec.kernel, icg = spec.in_per_group(), ocg = spec.out_per_group();
  const std::size_t H = x.h(), W = x.w(), OH = os.h, OW = os.w, st = spec.stride, pad = spec.padding;
  const std::size_t P = OH * OW, K = icg * k * k;
  using E = Eigen::Index;

  if (detail::use_gemm(spec)) {
    parallel_for(x.n(), [&](std::size_t n) {
      std::vector<T> col;
      for (std::size_t g = 0; g < spec.groups; ++g) {
        const T* cp = x.plane(n, g * icg);
        if (!detail::col_is_input(spec)) {
          detail::im2col(x, n, g * icg, spec, OH, OW, col);
          cp = col.data();
        }
        detail::MatMap<T> o(out.plane(n, g * ocg), E(ocg), E(P));
        o.noalias() = detail::ConstMatMap<T>(weights.data() + g * ocg * K, E(ocg), E(K)) *
                      detail::ConstMatMap<T>(cp, E(K), E(P));
        if (spec.has_bias)
          for (std::size_t j = 0; j < ocg; ++j) o.row(E(j)).array() += bias[g * ocg + j];
      }
    });
    GHOSTFORGE_ASSERT_FINITE(out);
    return out;
  }

  parallel_for(x.n(), [&](std::size_t n) {
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      T* op = out.plane(n, oc);
      if (spec.has_bias)
        for (std::size_t i = 0; i < P; ++i) op[i] = bias[oc];
      const T* ip = x.plane(n, oc);
      const T* wp = weights.data() + oc * k * k;
      for (std::size_t kh = 0; kh < k; ++kh) {
        std::size_t oh0, oh1;
        detail::valid_range(H, OH, st, kh, pad, oh0, oh1);
        for (std::size_t kw = 0; kw < k; ++kw) {
          const T wv = wp[kh * k + kw];
          std::size_t ow0, ow1;
          detail::valid_range(W, OW, st, kw, pad, ow0, ow1);
          for (std::size_t oh = oh0; oh < oh1; ++oh) {
            T* orow = op + oh * OW;
            const T* irow = ip + (oh * st + kh - pad) * W + kw - pad;
            if (st == 1) {
              for (std::size_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * irow[ow];
            } else {
              for (std::size_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * irow[ow * st];
            }
          }
        }
      }
    }
  });
  GHOSTFORGE_ASSERT_FINITE(out);
  return out;
}

template <class T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weights,
                             const Tensor<T>& grad_out) {
  detail::check_conv_inputs("conv2d_backward", x.shape(), spec, weights.shape());
  const Shape os = spec.out_shape(x.shape());
  expect_axis("conv2d_backward", "grad.batch", os.n, grad_out.n());
  expect_axis("conv2d_backward", "grad.channels", os.c, grad_out.c());
  expect_axis("conv2d_backward", "grad.height", os.h, grad_out.h());
  expect_axis("conv2d_backward", "grad.width", os.w, grad_out.w());

  ConvGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weights.shape()), {}};
  const std::size_t k = spec.kernel, icg = spec.in_per_group(), ocg = spec.out_per_group();
  const std::size_t H = x.h(), W = x.w(), OH = os.h, OW = os.w, st = spec.stride, pad = spec.padding;
  const std::size_t P = OH * OW, K = icg * k * k;
  using E = Eigen::Index;

  if (detail::use_gemm(spec)) {
    // grad wrt input: samples are independent.
    parallel_for(x.n(), [&](std::size_t n) {
      std::vector<T> col;
      for (std::size_t grp = 0; grp < spec.groups; ++grp) {
        const detail::ConstMatMap<T> w(weights.data() + grp * ocg * K, E(ocg), E(K));
        const detail::ConstMatMap<T> go(grad_out.plane(n, grp * ocg), E(ocg), E(P));
        if (detail::col_is_input(spec)) {
          detail::MatMap<T>(g.input.plane(n, grp * icg), E(K), E(P)).noalias() = w.transpose() * go;
        } else {
          col.resize(K * P);
          detail::MatMap<T>(col.data(), E(K), E(P)).noalias() = w.transpose() * go;
          detail::col2im_add(col, n, grp * icg, spec, OH, OW, g.input);
        }
      }
    });
    // grad wrt weights: groups are independent; batch summed in order.
    parallel_for(spec.groups, [&](std::size_t grp) {
      std::vector<T> col;
      detail::MatMap<T> gw(g.weights.data() + grp * ocg * K, E(ocg), E(K));
      for (std::size_t n = 0; n < x.n(); ++n) {
        const T* cp = x.plane(n, grp * icg);
        if (!detail::col_is_input(spec)) {
          detail::im2col(x, n, grp * icg, spec, OH, OW, col);
          cp = col.data();
        }
        gw.noalias() += detail::ConstMatMap<T>(grad_out.plane(n, grp * ocg), E(ocg), E(P)) *
                        detail::ConstMatMap<T>(cp, E(K), E(P)).transpose();
      }
    });
  } else {
    // Depthwise: grad wrt input, samples independent.
    parallel_for(x.n(), [&](std::size_t n) {
      for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
        const T* gp = grad_out.plane(n, oc);
        T* gip = g.input.plane(n, oc);
        const T* wp = weights.data() + oc * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          std::size_t oh0, oh1;
          detail::valid_range(H, OH, st, kh, pad, oh0, oh1);
          for (std::size_t kw = 0; kw < k; ++kw) {
            const T wv = wp[kh * k + kw];
            std::size_t ow0, ow1;
            detail::valid_range(W, OW, st, kw, pad, ow0, ow1);
            for (std::size_t oh = oh0; oh < oh1; ++oh) {
              const T* grow = gp + oh * OW;
              T* irow = gip + (oh * st + kh - pad) * W + kw - pad;
              for (std::size_t ow = ow0; ow < ow1; ++ow) irow[ow * st] += wv * grow[ow];
            }
          }
        }
      }
    });
    // Depthwise: grad wrt weights, channels independent; batch summed in order.
    parallel_for(spec.out_channels, [&](std::size_t oc) {
      for (std::size_t n = 0; n < x.n(); ++n) {
        const T* gp = grad_out.plane(n, oc);
        const T* ip = x.plane(n, oc);
        T* gwp = g.weights.data() + oc * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          std::size_t oh0, oh1;
          detail::valid_range(H, OH, st, kh, pad, oh0, oh1);
          for (std::size_t kw = 0; kw < k; ++kw) {
            std::size_t ow0, ow1;
            detail::valid_range(W, OW, st, kw, pad, ow0, ow1);
            T acc = T(0);
            for (std::size_t oh = oh0; oh < oh1; ++oh) {
              const T* grow = gp + oh * OW;
              const T* irow = ip + (oh * st + kh - pad) * W + kw - pad;
              for (std::size_t ow = ow0; ow < ow1; ++ow) acc += grow[ow] * irow[ow * st];
            }
            gwp[kh * k + kw] += acc;
          }
        }
      }
    });
  }

  if (spec.has_bias) {
    g.bias.assign(spec.out_channels, T(0));
    for (std::size_t n = 0; n < x.n(); ++n)
      for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
        const T* gp = grad_out.plane(n, oc);
        T acc = T(0);
        for (std::size_t i = 0; i < P; ++i) acc += gp[i];
        g.bias[oc] += acc;
      }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

template <class T>
struct BatchNormState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.1);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
        running_var(channels, T(1)) {}

  std::size_t channels() const { return gamma.size(); }

  void validate() const {
    if (!(epsilon > T(0))) throw ConfigError("batchnorm: epsilon must be > 0");
    for (T v : running_var)
      if (v < T(0)) throw ConfigError("batchnorm: running variance must be >= 0");
  }
};

template <class T>
struct BatchNormCache {
  Tensor<T> normalized;      // x_hat
  std::vector<T> inv_std;    // per channel
  bool training = false;
};

/// Normalizes per channel. Training mode uses batch statistics and folds them
/// into the running estimates (unbiased variance); inference uses the running
/// estimates only.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& state, bool training,
                            BatchNormCache<T>* cache = nullptr) {
  expect_axis("batchnorm_forward", "channels", state.channels(), x.c());
  state.validate();
  const std::size_t C = x.c(), P = x.h() * x.w(), N = x.n();
  const std::size_t count = N * P;
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (training) {
      if (count == 0) throw DimensionError("batchnorm_forward", "batch", 1, 0);
      T sum = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < P; ++i) sum += p[i];
      }
      mean = sum / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < P; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / static_cast<T>(count);
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const T is = T(1) / std::sqrt(var + state.epsilon);
    inv_std[c] = is;
    for (std::size_t n = 0; n < N; ++n) {
      const T* p = x.plane(n, c);
      T* hp = xhat.plane(n, c);
      T* yp = y.plane(n, c);
      for (std::size_t i = 0; i < P; ++i) {
        hp[i] = (p[i] - mean) * is;
        yp[i] = state.gamma[c] * hp[i] + state.beta[c];
      }
    }
  }
  if (cache != nullptr) *cache = BatchNormCache<T>{std::move(xhat), std::move(inv_std), training};
  GHOSTFORGE_ASSERT_FINITE(y);
  return y;
}

template <class T>
struct BatchNormGrads {
  Tensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

template <class T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                                     std::span<const T> gamma) {
  expect_axis("batchnorm_backward", "channels", gamma.size(), grad_out.c());
  if (grad_out.shape() != cache.normalized.shape())
    throw DimensionError("batchnorm_backward", "shape", cache.normalized.size(), grad_out.size());
  const std::size_t C = grad_out.c(), P = grad_out.h() * grad_out.w(), N = grad_out.n();
  const T count = static_cast<T>(N * P);
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), std::vector<T>(C, T(0)), std::vector<T>(C, T(0))};
  for (std::size_t c = 0; c < C; ++c) {
    T sum_g = T(0), sum_gx = T(0);
    for (std::size_t n = 0; n < N; ++n) {
      const T* gp = grad_out.plane(n, c);
      const T* hp = cache.normalized.plane(n, c);
      for (std::size_t i = 0; i < P; ++i) {
        sum_g += gp[i];
        sum_gx += gp[i] * hp[i];
      }
    }
    g.beta[c] = sum_g;
    g.gamma[c] = sum_gx;
    const T scale = gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < N; ++n) {
      const T* gp = grad_out.plane(n, c);
      const T* hp = cache.normalized.plane(n, c);
      T* op = g.input.plane(n, c);
      if (cache.training) {
        for (std::size_t i = 0; i < P; ++i)
          op[i] = scale * (gp[i] - sum_g / count - hp[i] * sum_gx / count);
      } else {
        for (std::size_t i = 0; i < P; ++i) op[i] = scale * gp[i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise and pooling

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

/// Gradient of relu given its forward *output* (y > 0 iff x > 0).
template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  if (y.shape() != grad_out.shape()) throw DimensionError("relu_backward", "shape", y.size(), grad_out.size());
  Tensor<T> g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = y[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  expect_axis("add", "batch", a.n(), b.n());
  expect_axis("add", "channels", a.c(), b.c());
  expect_axis("add", "height", a.h(), b.h());
  expect_axis("add", "width", a.w(), b.w());
  Tensor<T> y = a;
  y += b;
  return y;
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), 1, 1);
  const std::size_t P = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T* p = x.plane(n, c);
      T acc = T(0);
      for (std::size_t i = 0; i < P; ++i) acc += p[i];
      y(n, c, 0, 0) = acc / static_cast<T>(P);
    }
  return y;
}

template <class T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  expect_axis("global_avg_pool_backward", "batch", input_shape.n, grad_out.n());
  expect_axis("global_avg_pool_backward", "channels", input_shape.c, grad_out.c());
  Tensor<T> g(input_shape);
  const std::size_t P = input_shape.h * input_shape.w;
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const T v = grad_out(n, c, 0, 0) / static_cast<T>(P);
      T* p = g.plane(n, c);
      for (std::size_t i = 0; i < P; ++i) p[i] = v;
    }
  return g;
}

struct PoolSpec {
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;

  std::size_t out_extent(std::size_t in) const {
    if (in + 2 * padding < kernel) throw ConfigError("max_pool: kernel larger than padded input");
    return (in + 2 * padding - kernel) / stride + 1;
  }
};

template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x, const PoolSpec& spec, std::vector<std::size_t>* argmax = nullptr) {
  const std::size_t OH = spec.out_extent(x.h()), OW = spec.out_extent(x.w());
  Tensor<T> y(x.n(), x.c(), OH, OW);
  if (argmax) argmax->assign(y.size(), 0);
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = 0;
          for (std::size_t kh = 0; kh < spec.kernel; ++kh) {
            const long ih = static_cast<long>(oh * spec.stride + kh) - static_cast<long>(spec.padding);
            if (ih < 0 || ih >= static_cast<long>(x.h())) continue;
            for (std::size_t kw = 0; kw < spec.kernel; ++kw) {
              const long iw = static_cast<long>(ow * spec.stride + kw) - static_cast<long>(spec.padding);
              if (iw < 0 || iw >= static_cast<long>(x.w())) continue;
              const std::size_t idx = x.index(n, c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
              if (x[idx] > best) {
                best = x[idx];
                best_i = idx;
              }
            }
          }
          const std::size_t o = y.index(n, c, oh, ow);
          y[o] = best;
          if (argmax) (*argmax)[o] = best_i;
        }
  return y;
}

template <class T>
Tensor<T> max_pool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                              const Tensor<T>& grad_out) {
  expect_axis("max_pool2d_backward", "elements", argmax.size(), grad_out.size());
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected: x is (N, C_in) stored as (N, C_in, 1, 1); W is (C_out, C_in).

template <class T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> b) {
  const std::size_t in = x.c() * x.h() * x.w();
  expect_axis("fully_connected", "in_features", w.c(), in);
  const std::size_t out = w.n();
  if (!b.empty()) expect_axis("fully_connected", "bias", out, b.size());
  Tensor<T> y = Tensor<T>::matrix(x.n(), out);
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* xp = x.data() + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wp = w.data() + o * in;
      T acc = b.empty() ? T(0) : b[o];
      for (std::size_t i = 0; i < in; ++i) acc += wp[i] * xp[i];
      y(n, o, 0, 0) = acc;
    }
  }
  return y;
}

template <class T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

template <class T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& grad_out) {
  const std::size_t in = x.c() * x.h() * x.w();
  const std::size_t out = w.n();
  expect_axis("fully_connected_backward", "in_features", w.c(), in);
  expect_axis("fully_connected_backward", "out_features", out, grad_out.c());
  expect_axis("fully_connected_backward", "batch", x.n(), grad_out.n());
  LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.shape()), std::vector<T>(out, T(0))};
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* xp = x.data() + n * in;
    T* gx = g.input.data() + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T go = grad_out(n, o, 0, 0);
      const T* wp = w.data() + o * in;
      T* gw = g.weights.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        gx[i] += go * wp[i];
        gw[i] += go * xp[i];
      }
      g.bias[o] += go;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Channel plumbing

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw ConfigError("concat_channels: no inputs");
  const Shape& s0 = parts.front()->shape();
  std::size_t total = 0;
  for (const auto* p : parts) {
    expect_axis("concat_channels", "batch", s0.n, p->n());
    expect_axis("concat_channels", "height", s0.h, p->h());
    expect_axis("concat_channels", "width", s0.w, p->w());
    total += p->c();
  }
  Tensor<T> y(s0.n, total, s0.h, s0.w);
  const std::size_t P = s0.h * s0.w;
  for (std::size_t n = 0; n < s0.n; ++n) {
    std::size_t off = 0;
    for (const auto* p : parts) {
      std::copy_n(p->plane(n, 0), p->c() * P, y.plane(n, off));
      off += p->c();
    }
  }
  return y;
}

template <class T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> parts) {
  std::vector<const Tensor<T>*> v(parts);
  return concat_channels<T>(std::span<const Tensor<T>* const>(v));
}

/// Channels [begin, begin + count) of x.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.c()) throw DimensionError("slice_channels", "channels", x.c(), begin + count);
  Tensor<T> y(x.n(), count, x.h(), x.w());
  const std::size_t P = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n) std::copy_n(x.plane(n, begin), count * P, y.plane(n, 0));
  return y;
}

/// Adds grad into channels [begin, begin + grad.c()) of target.
template <class T>
void accumulate_channels(Tensor<T>& target, std::size_t begin, const Tensor<T>& grad) {
  if (begin + grad.c() > target.c())
    throw DimensionError("accumulate_channels", "channels", target.c(), begin + grad.c());
  const std::size_t P = target.h() * target.w();
  for (std::size_t n = 0; n < target.n(); ++n) {
    T* dst = target.plane(n, begin);
    const T* src = grad.plane(n, 0);
    for (std::size_t i = 0; i < grad.c() * P; ++i) dst[i] += src[i];
  }
}

/// x (N,C,H,W) + v (N,C) broadcast over the spatial plane.
template <class T>
Tensor<T> add_broadcast_channel(const Tensor<T>& x, const Tensor<T>& v) {
  expect_axis("add_broadcast_channel", "batch", x.n(), v.n());
  expect_axis("add_broadcast_channel", "channels", x.c(), v.c() * v.h() * v.w());
  Tensor<T> y = x;
  const std::size_t P = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T a = v[n * x.c() + c];
      T* p = y.plane(n, c);
      for (std::size_t i = 0; i < P; ++i) p[i] += a;
    }
  return y;
}

/// Gradient wrt the broadcast vector: spatial sum of grad_out.
template <class T>
Tensor<T> add_broadcast_channel_backward(const Tensor<T>& grad_out) {
  Tensor<T> g = Tensor<T>::matrix(grad_out.n(), grad_out.c());
  const std::size_t P = grad_out.h() * grad_out.w();
  for (std::size_t n = 0; n < grad_out.n(); ++n)
    for (std::size_t c = 0; c < grad_out.c(); ++c) {
      const T* p = grad_out.plane(n, c);
      T acc = T(0);
      for (std::size_t i = 0; i < P; ++i) acc += p[i];
      g(n, c, 0, 0) = acc;
    }
  return g;
}

/// x (N,C,H,W) scaled per channel by s (N,C).
template <class T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  expect_axis("scale_channels", "batch", x.n(), s.n());
  expect_axis("scale_channels", "channels", x.c(), s.c());
  Tensor<T> y(x.shape());
  const std::size_t P = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T a = s(n, c, 0, 0);
      const T* xp = x.plane(n, c);
      T* yp = y.plane(n, c);
      for (std::size_t i = 0; i < P; ++i) yp[i] = a * xp[i];
    }
  return y;
}

/// Piecewise-linear sigmoid clamp((t + 3) / 6, 0, 1).
template <class T>
Tensor<T> hard_sigmoid(const Tensor<T>& t) {
  Tensor<T> y(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) y[i] = std::clamp((t[i] + T(3)) / T(6), T(0), T(1));
  return y;
}

template <class T>
Tensor<T> hard_sigmoid_backward(const Tensor<T>& t, const Tensor<T>& grad_out) {
  Tensor<T> g(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i)
    g[i] = (t[i] > T(-3) && t[i] < T(3)) ? grad_out[i] / T(6) : T(0);
  return g;
}

}  // namespace ghostforge
