// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/errors.hpp"
#include "multiception/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace multiception {

template <typename T> Tensor4<T> relu(const Tensor4<T> &input) {
  Tensor4<T> out = input;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > T(0))) out[i] = T(0);
  }
  return out;
}

/// Passes grad_output where input > 0, zero elsewhere.
template <typename T> Tensor4<T> relu_backward(const Tensor4<T> &input, const Tensor4<T> &grad_output) {
  require_same_shape(input, grad_output, "relu_backward");
  Tensor4<T> out = grad_output;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(input[i] > T(0))) out[i] = T(0);
  }
  return out;
}

/// Stacks tensors along the channel axis in the order given.
template <typename T> Tensor4<T> concat_channels(std::span<const Tensor4<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no parts");
  const Shape4 first = parts.front().shape();
  std::size_t channels = 0;
  for (const auto &p : parts) {
    if (p.n() != first.n || p.h() != first.h || p.w() != first.w) {
      throw DimensionError("concat_channels: part shape " + p.shape().str() + " incompatible with " + first.str());
    }
    channels += p.c();
  }
  Tensor4<T> out(Shape4{first.n, channels, first.h, first.w});
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t c0 = 0;
    for (const auto &p : parts) {
      const auto *src = p.data() + p.index(n, 0, 0, 0);
      std::copy(src, src + p.c() * first.h * first.w, out.data() + out.index(n, c0, 0, 0));
      c0 += p.c();
    }
  }
  return out;
}

template <typename T> Tensor4<T> concat_channels(const std::vector<Tensor4<T>> &parts) {
  return concat_channels(std::span<const Tensor4<T>>(parts));
}

/// Inverse of concat_channels; also its backward pass.
template <typename T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T> &input, std::span<const std::size_t> widths) {
  std::size_t total = 0;
  for (auto w : widths) total += w;
  if (total != input.c()) {
    throw DimensionError("split_channels: widths sum to " + std::to_string(total) + ", tensor has " +
                         std::to_string(input.c()) + " channels");
  }
  std::vector<Tensor4<T>> parts;
  parts.reserve(widths.size());
  std::size_t c0 = 0;
  for (auto width : widths) {
    Tensor4<T> part(Shape4{input.n(), width, input.h(), input.w()});
    for (std::size_t n = 0; n < input.n(); ++n) {
      const auto *src = input.data() + input.index(n, c0, 0, 0);
      std::copy(src, src + width * input.h() * input.w(), part.data() + part.index(n, 0, 0, 0));
    }
    parts.push_back(std::move(part));
    c0 += width;
  }
  return parts;
}

/// Mean over each spatial plane: (n,c,h,w) -> (n,c,1,1).
template <typename T> Tensor4<T> global_avg_pool(const Tensor4<T> &input) {
  Tensor4<T> out(Shape4{input.n(), input.c(), 1, 1});
  const T inv = T(1) / static_cast<T>(input.h() * input.w());
  for (std::size_t n = 0; n < input.n(); ++n) {
    for (std::size_t c = 0; c < input.c(); ++c) {
      T s = T(0);
      for (T v : input.plane(n, c)) s += v;
      out(n, c, 0, 0) = s * inv;
    }
  }
  return out;
}

template <typename T> Tensor4<T> global_avg_pool_backward(const Shape4 &input_shape, const Tensor4<T> &grad_output) {
  Tensor4<T> g(input_shape);
  const T inv = T(1) / static_cast<T>(input_shape.h * input_shape.w);
  for (std::size_t n = 0; n < input_shape.n; ++n) {
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const T v = grad_output(n, c, 0, 0) * inv;
      for (T &x : g.plane(n, c)) x = v;
    }
  }
  return g;
}

/// Non-overlapping average pooling with square window `size`.
template <typename T> Tensor4<T> avg_pool(const Tensor4<T> &input, std::size_t size) {
  if (size == 0 || input.h() % size != 0 || input.w() % size != 0) {
    throw DimensionError("avg_pool: window " + std::to_string(size) + " does not tile " + input.shape().str());
  }
  const std::size_t oh = input.h() / size, ow = input.w() / size;
  Tensor4<T> out(Shape4{input.n(), input.c(), oh, ow});
  const T inv = T(1) / static_cast<T>(size * size);
  for (std::size_t n = 0; n < input.n(); ++n)
    for (std::size_t c = 0; c < input.c(); ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T s = T(0);
          for (std::size_t i = 0; i < size; ++i)
            for (std::size_t j = 0; j < size; ++j) s += input(n, c, y * size + i, x * size + j);
          out(n, c, y, x) = s * inv;
        }
  return out;
}

template <typename T>
Tensor4<T> avg_pool_backward(const Shape4 &input_shape, const Tensor4<T> &grad_output, std::size_t size) {
  Tensor4<T> g(input_shape);
  const T inv = T(1) / static_cast<T>(size * size);
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c)
      for (std::size_t y = 0; y < input_shape.h; ++y)
        for (std::size_t x = 0; x < input_shape.w; ++x) g(n, c, y, x) = grad_output(n, c, y / size, x / size) * inv;
  return g;
}

} // namespace multiception
