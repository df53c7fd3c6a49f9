// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "ghostforge/module.hpp"
#include "ghostforge/random.hpp"

namespace gf_test {

using namespace ghostforge;

inline Tensor<double> random_tensor(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  GaussianStream g(seed);
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * g.next();
  return t;
}

/// Relative error with a unit-scale floor: |a - n| / max(1, |a|, |n|).
inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t params = 0;
  std::string worst;
};

inline std::size_t trainable_count(Module<double>& m) {
  std::size_t n = 0;
  m.visit("", [&](ParamRef<double>& p) {
    if (p.trainable()) n += p.value->size();
  });
  return n;
}

/// Perturbs every trainable weight by small Gaussian noise so BN scales and
/// biases are not at their symmetric defaults.
inline void randomize_params(Module<double>& m, std::uint64_t seed, double scale = 0.5) {
  GaussianStream g(seed);
  m.visit("", [&](ParamRef<double>& p) {
    if (!p.trainable()) return;
    for (auto& v : *p.value) v = (p.role == ParamRole::BnScale ? 1.0 : 0.0) + scale * g.next();
  });
}

/// Sets every BN layer to an exact identity in eval mode: gamma 1, beta 0,
/// mean 0 and a running variance chosen so that var + epsilon == 1 exactly.
inline void set_bn_identity(Module<double>& m, double epsilon = 1e-5) {
  double rv = 1.0 - epsilon;
  while (rv + epsilon > 1.0) rv = std::nextafter(rv, 0.0);
  while (rv + epsilon < 1.0) rv = std::nextafter(rv, 2.0);
  m.visit("", [&](ParamRef<double>& p) {
    double v = 0.0;
    if (p.role == ParamRole::BnScale) v = 1.0;
    else if (p.role == ParamRole::RunningVar) v = rv;
    else if (p.role != ParamRole::BnShift && p.role != ParamRole::RunningMean) return;
    std::fill(p.value->begin(), p.value->end(), v);
  });
}

/// Compares backward() against central differences of L = sum(r * f(x)) with
/// respect to the input and every trainable parameter.
inline GradCheckResult grad_check(Module<double>& m, const Tensor<double>& x, Mode mode, std::uint64_t seed,
                                  double h = 1e-6) {
  GradCheckResult res;
  Tensor<double> y0 = m.forward(x, mode);
  const Tensor<double> r = random_tensor(y0.shape(), seed);
  auto loss = [&](const Tensor<double>& in) {
    Tensor<double> y = m.forward(in, mode);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  m.visit("", [](ParamRef<double>& p) {
    if (p.grad) p.grad->clear();
  });
  m.forward(x, mode);
  const Tensor<double> gx = m.backward(r);

  auto consider = [&](double a, double n, const std::string& what) {
    const double e = rel_err(a, n);
    if (e > res.max_rel_error) {
      res.max_rel_error = e;
      res.worst = what;
    }
  };

  Tensor<double> xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double lp = loss(xp);
    xp[i] = orig - h;
    const double lm = loss(xp);
    xp[i] = orig;
    consider(gx[i], (lp - lm) / (2 * h), "input[" + std::to_string(i) + "]");
  }

  std::vector<std::vector<double>> grads;
  m.visit("", [&](ParamRef<double>& p) {
    if (!p.trainable()) return;
    std::vector<double> g = *p.grad;
    if (g.empty()) g.assign(p.value->size(), 0.0);
    grads.push_back(std::move(g));
  });
  std::size_t k = 0;
  std::vector<ParamRef<double>> refs;
  m.visit("", [&](ParamRef<double>& p) {
    if (p.trainable()) refs.push_back(p);
  });
  for (auto& p : refs) {
    auto& v = *p.value;
    res.params += v.size();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double lp = loss(x);
      v[i] = orig - h;
      const double lm = loss(x);
      v[i] = orig;
      consider(grads[k][i], (lp - lm) / (2 * h), p.name + "[" + std::to_string(i) + "]");
    }
    ++k;
  }
  return res;
}

}  // namespace gf_test
