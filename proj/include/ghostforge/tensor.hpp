// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef GHOSTFORGE_REAL
#define GHOSTFORGE_REAL float
#endif

namespace ghostforge {

/// Numeric width selected at build time for training and benchmarking.
/// Gradient-check code instantiates the templates with double directly.
using Real = GHOSTFORGE_REAL;

// ---------------------------------------------------------------------------
// Errors

/// A tensor axis did not have the size an operation required.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(const std::string& op, const std::string& axis, std::size_t expected,
                 std::size_t actual)
      : std::invalid_argument(op + ": dimension mismatch on axis '" + axis + "' (expected " +
                              std::to_string(expected) + ", got " + std::to_string(actual) + ")"),
        axis_(axis) {}

  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

/// Hyper-parameters that cannot describe a valid layer or network.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// File-system or format failure, always carrying the offending path.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// Shape

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

inline void expect_axis(const char* op, const char* axis, std::size_t expected, std::size_t actual) {
  if (expected != actual) throw DimensionError(op, axis, expected, actual);
}

// ---------------------------------------------------------------------------
// Tensor

/// Dense rank-4 (N, C, H, W) array in row-major order.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw DimensionError("Tensor", "data", shape_.numel(), data_.size());
  }
  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(shape, std::vector<T>(values)) {}

  /// (N, C) matrix stored as (N, C, 1, 1).
  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
    return Tensor(Shape{rows, cols, 1, 1}, fill);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t n() const noexcept { return shape_.n; }
  std::size_t c() const noexcept { return shape_.c; }
  std::size_t h() const noexcept { return shape_.h; }
  std::size_t w() const noexcept { return shape_.w; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  std::size_t index(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) const noexcept {
    return ((in * shape_.c + ic) * shape_.h + ih) * shape_.w + iw;
  }
  T& operator()(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) noexcept {
    return data_[index(in, ic, ih, iw)];
  }
  const T& operator()(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) const noexcept {
    return data_[index(in, ic, ih, iw)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Pointer to the (h, w) plane of sample `in`, channel `ic`.
  T* plane(std::size_t in, std::size_t ic) noexcept { return data_.data() + index(in, ic, 0, 0); }
  const T* plane(std::size_t in, std::size_t ic) const noexcept {
    return data_.data() + index(in, ic, 0, 0);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    if (o.shape_ != shape_) throw DimensionError("Tensor::+=", "shape", shape_.numel(), o.size());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff", "shape", a.size(), b.size());
  T m = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace ghostforge
