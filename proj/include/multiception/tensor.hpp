// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace multiception {

/// Extents of a rank-4 NCHW tensor.
struct Shape4 {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr bool operator==(const Shape4 &) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

inline std::ostream &operator<<(std::ostream &os, const Shape4 &s) { return os << s.str(); }

/**
 * Dense rank-4 array in row-major N,C,H,W order.
 *
 * Every extent is at least one. Storage is a plain contiguous vector, so a
 * Tensor4 is a regular value type: copies are deep and moves are cheap.
 */
template <typename T> class Tensor4 {
public:
  using value_type = T;

  Tensor4() : Tensor4(Shape4{}) {}

  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(checked(shape)), data_(shape.size(), fill) {}

  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor4(Shape4{n, c, h, w}, fill) {}

  Tensor4(Shape4 shape, std::vector<T> data) : shape_(checked(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
    }
  }

  const Shape4 &shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_.n; }
  std::size_t c() const noexcept { return shape_.c; }
  std::size_t h() const noexcept { return shape_.h; }
  std::size_t w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  T &operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[index(n, c, h, w)];
  }
  const T &operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[index(n, c, h, w)];
  }

  T &operator[](std::size_t i) noexcept { return data_[i]; }
  const T &operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  T *data() noexcept { return data_.data(); }
  const T *data() const noexcept { return data_.data(); }
  const std::vector<T> &values() const noexcept { return data_; }

  /// Contiguous view of one (n, c) spatial plane.
  std::span<T> plane(std::size_t n, std::size_t c) noexcept {
    return {data_.data() + index(n, c, 0, 0), shape_.plane()};
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const noexcept {
    return {data_.data() + index(n, c, 0, 0), shape_.plane()};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Element-type conversion, e.g. float activations into a double gradcheck.
  template <typename U> Tensor4<U> cast() const {
    return Tensor4<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor4 &other) const = default;

private:
  static Shape4 checked(Shape4 s) {
    if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
      throw DimensionError("tensor dimensions must be >= 1, got " + s.str());
    }
    return s;
  }

  Shape4 shape_;
  std::vector<T> data_;
};

template <typename T> void require_same_shape(const Tensor4<T> &a, const Tensor4<T> &b, const char *what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
  }
}

/// out = a + b, elementwise.
template <typename T> Tensor4<T> add(const Tensor4<T> &a, const Tensor4<T> &b) {
  require_same_shape(a, b, "add");
  Tensor4<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

/// a += b, elementwise.
template <typename T> void add_inplace(Tensor4<T> &a, const Tensor4<T> &b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T> Tensor4<T> scaled(const Tensor4<T> &a, T s) {
  Tensor4<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return out;
}

/// Largest |a_i - b_i| / max(1, |a_i|, |b_i|).
template <typename T> double max_relative_error(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    const double denom = std::max({1.0, std::abs(x), std::abs(y)});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

template <typename T> double max_relative_error(const Tensor4<T> &a, const Tensor4<T> &b) {
  require_same_shape(a, b, "max_relative_error");
  return max_relative_error<T>(a.span(), b.span());
}

} // namespace multiception
