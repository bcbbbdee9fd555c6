// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/errors.hpp"
#include "multiception/gemm.hpp"
#include "multiception/tensor.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace multiception {

inline bool is_supported_kernel(std::size_t k) { return k == 1 || k == 3 || k == 5 || k == 7; }

/**
 * Weights of one (possibly grouped) 2-D convolution.
 *
 * `kernel` has shape (out_channels, in_channels / groups, k, k). Depthwise
 * convolution is the case groups == in_channels == out_channels.
 */
template <typename T> struct ConvWeights {
  Tensor4<T> kernel;
  std::optional<std::vector<T>> bias;
  std::size_t groups = 1;

  ConvWeights() = default;
  ConvWeights(std::size_t out_channels, std::size_t in_channels, std::size_t k, std::size_t groups_ = 1,
              bool with_bias = false)
      : kernel(Shape4{out_channels, checked_group_width(in_channels, out_channels, groups_), k, k}),
        groups(groups_) {
    if (!is_supported_kernel(k)) throw ConfigError("unsupported kernel size " + std::to_string(k));
    if (with_bias) bias.emplace(out_channels, T(0));
  }

  std::size_t out_channels() const { return kernel.n(); }
  std::size_t in_channels() const { return kernel.c() * groups; }
  std::size_t k() const { return kernel.h(); }

  /// Learnable scalar count (kernel plus optional bias).
  std::size_t param_count() const { return kernel.size() + (bias ? bias->size() : 0); }

  void validate() const {
    if (groups == 0 || kernel.n() % groups != 0) {
      throw ConfigError("groups " + std::to_string(groups) + " must divide out_channels " +
                        std::to_string(kernel.n()));
    }
    if (kernel.h() != kernel.w()) throw ConfigError("only square kernels are supported");
    if (!is_supported_kernel(kernel.h())) {
      throw ConfigError("unsupported kernel size " + std::to_string(kernel.h()));
    }
    if (bias && bias->size() != kernel.n()) throw DimensionError("bias length must equal out_channels");
  }

private:
  static std::size_t checked_group_width(std::size_t in_c, std::size_t out_c, std::size_t g) {
    if (g == 0 || in_c % g != 0 || out_c % g != 0) {
      throw ConfigError("groups " + std::to_string(g) + " must divide in_channels " + std::to_string(in_c) +
                        " and out_channels " + std::to_string(out_c));
    }
    return in_c / g;
  }
};

/// Spatial output extent of a convolution; throws when the padded input is
/// smaller than the kernel.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("stride must be positive");
  if (in + 2 * padding < k) {
    throw DimensionError("padded extent " + std::to_string(in + 2 * padding) + " smaller than kernel " +
                         std::to_string(k));
  }
  return (in + 2 * padding - k) / stride + 1;
}

namespace detail {

template <typename T>
Shape4 conv_output_shape(const Tensor4<T> &input, const ConvWeights<T> &w, std::size_t stride,
                         std::size_t padding) {
  w.validate();
  if (input.c() != w.in_channels()) {
    throw DimensionError("conv input has " + std::to_string(input.c()) + " channels, weights expect " +
                         std::to_string(w.in_channels()));
  }
  return {input.n(), w.out_channels(), conv_out_extent(input.h(), w.k(), stride, padding),
          conv_out_extent(input.w(), w.k(), stride, padding)};
}

/// Unrolls the receptive fields of channels [c0, c0 + cg) of image `n` into
/// a (cg*k*k) x (oh*ow) column matrix.
template <typename T>
void im2col(const Tensor4<T> &input, std::size_t n, std::size_t c0, std::size_t cg, std::size_t k,
            std::size_t stride, std::size_t padding, std::size_t oh, std::size_t ow, T *cols) {
  const std::size_t H = input.h(), W = input.w();
  const std::size_t ncols = oh * ow;
  for (std::size_t c = 0; c < cg; ++c) {
    const T *src = input.plane(n, c0 + c).data();
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T *row = cols + ((c * k + ki) * k + kj) * ncols;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(padding);
          T *dst = row + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T *line = src + static_cast<std::size_t>(iy) * W;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kj) - static_cast<std::ptrdiff_t>(padding);
            dst[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) ? T(0) : line[ix];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column-matrix entries back onto the image.
template <typename T>
void col2im(const T *cols, std::size_t n, std::size_t c0, std::size_t cg, std::size_t k, std::size_t stride,
            std::size_t padding, std::size_t oh, std::size_t ow, Tensor4<T> &grad_input) {
  const std::size_t H = grad_input.h(), W = grad_input.w();
  const std::size_t ncols = oh * ow;
  for (std::size_t c = 0; c < cg; ++c) {
    T *dst = grad_input.plane(n, c0 + c).data();
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T *row = cols + ((c * k + ki) * k + kj) * ncols;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          T *line = dst + static_cast<std::size_t>(iy) * W;
          for (std::size_t x = 0; x < ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kj) - static_cast<std::ptrdiff_t>(padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) line[ix] += row[y * ow + x];
          }
        }
      }
    }
  }
}

// A 1x1, stride-1, unpadded convolution needs no lowering: the input planes
// already form the column matrix.
template <typename T> bool is_pointwise_identity_lowering(std::size_t k, std::size_t stride, std::size_t padding) {
  return k == 1 && stride == 1 && padding == 0;
}

} // namespace detail

/**
 * Reference grouped convolution (cross-correlation, zero padding) evaluated
 * by direct summation over each receptive field. Slow; used as the oracle
 * for conv2d_fast.
 */
template <typename T>
Tensor4<T> conv2d_naive(const Tensor4<T> &input, const ConvWeights<T> &w, std::size_t stride, std::size_t padding) {
  const Shape4 os = detail::conv_output_shape(input, w, stride, padding);
  Tensor4<T> out(os);
  const std::size_t k = w.k();
  const std::size_t cin_g = w.kernel.c();
  const std::size_t cout_g = w.out_channels() / w.groups;
  const auto H = static_cast<std::ptrdiff_t>(input.h());
  const auto W = static_cast<std::ptrdiff_t>(input.w());
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t oc = 0; oc < os.c; ++oc) {
      const std::size_t g = oc / cout_g;
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          T acc = w.bias ? (*w.bias)[oc] : T(0);
          for (std::size_t ic = 0; ic < cin_g; ++ic) {
            for (std::size_t ki = 0; ki < k; ++ki) {
              for (std::size_t kj = 0; kj < k; ++kj) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(padding);
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kj) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += input(n, g * cin_g + ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       w.kernel(oc, ic, ki, kj);
              }
            }
          }
          out(n, oc, y, x) = acc;
        }
      }
    }
  }
  return out;
}

/**
 * Grouped convolution lowered to one matrix product per (image, group):
 * kernel[(cout/g) x (cin/g*k*k)] * cols[(cin/g*k*k) x (oh*ow)].
 * Same semantics as conv2d_naive.
 */
template <typename T>
Tensor4<T> conv2d_fast(const Tensor4<T> &input, const ConvWeights<T> &w, std::size_t stride, std::size_t padding) {
  const Shape4 os = detail::conv_output_shape(input, w, stride, padding);
  Tensor4<T> out(os);
  const std::size_t k = w.k();
  const std::size_t G = w.groups;
  const std::size_t cin_g = w.kernel.c();
  const std::size_t cout_g = w.out_channels() / G;
  const std::size_t rows = cin_g * k * k;
  const std::size_t ncols = os.h * os.w;
  const bool direct = detail::is_pointwise_identity_lowering<T>(k, stride, padding);
  std::vector<T> cols(direct ? 0 : rows * ncols);

  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t g = 0; g < G; ++g) {
      const T *B;
      if (direct) {
        B = input.plane(n, g * cin_g).data();
      } else {
        detail::im2col(input, n, g * cin_g, cin_g, k, stride, padding, os.h, os.w, cols.data());
        B = cols.data();
      }
      T *C = out.plane(n, g * cout_g).data();
      if (w.bias) {
        for (std::size_t oc = 0; oc < cout_g; ++oc) {
          std::fill(C + oc * ncols, C + (oc + 1) * ncols, (*w.bias)[g * cout_g + oc]);
        }
      }
      gemm::nn(cout_g, ncols, rows, w.kernel.data() + g * cout_g * rows, rows, B, ncols, C, ncols);
    }
  }
  return out;
}

template <typename T> struct ConvGrads {
  Tensor4<T> grad_input;
  Tensor4<T> grad_kernel;
  std::vector<T> grad_bias; // one entry per output channel, present even without bias
};

/// Exact gradients of a convolution given the upstream gradient.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T> &input, const ConvWeights<T> &w, const Tensor4<T> &grad_output,
                             std::size_t stride, std::size_t padding) {
  const Shape4 os = detail::conv_output_shape(input, w, stride, padding);
  if (grad_output.shape() != os) {
    throw DimensionError("conv2d_backward: grad_output shape " + grad_output.shape().str() + " expected " + os.str());
  }
  const std::size_t k = w.k();
  const std::size_t G = w.groups;
  const std::size_t cin_g = w.kernel.c();
  const std::size_t cout_g = w.out_channels() / G;
  const std::size_t rows = cin_g * k * k;
  const std::size_t ncols = os.h * os.w;
  const bool direct = detail::is_pointwise_identity_lowering<T>(k, stride, padding);

  ConvGrads<T> g{Tensor4<T>(input.shape()), Tensor4<T>(w.kernel.shape()), std::vector<T>(os.c, T(0))};
  std::vector<T> cols(direct ? 0 : rows * ncols);
  std::vector<T> grad_cols(direct ? 0 : rows * ncols);

  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t oc = 0; oc < os.c; ++oc) {
      T acc = T(0);
      for (T v : grad_output.plane(n, oc)) acc += v;
      g.grad_bias[oc] += acc;
    }
    for (std::size_t grp = 0; grp < G; ++grp) {
      const T *dY = grad_output.plane(n, grp * cout_g).data();
      const T *Wg = w.kernel.data() + grp * cout_g * rows;
      T *dW = g.grad_kernel.data() + grp * cout_g * rows;
      if (direct) {
        const T *X = input.plane(n, grp * cin_g).data();
        gemm::nt(cout_g, rows, ncols, dY, ncols, X, ncols, dW, rows);
        gemm::tn(rows, ncols, cout_g, Wg, rows, dY, ncols, g.grad_input.plane(n, grp * cin_g).data(), ncols);
      } else {
        detail::im2col(input, n, grp * cin_g, cin_g, k, stride, padding, os.h, os.w, cols.data());
        gemm::nt(cout_g, rows, ncols, dY, ncols, cols.data(), ncols, dW, rows);
        std::fill(grad_cols.begin(), grad_cols.end(), T(0));
        gemm::tn(rows, ncols, cout_g, Wg, rows, dY, ncols, grad_cols.data(), ncols);
        detail::col2im(grad_cols.data(), n, grp * cin_g, cin_g, k, stride, padding, os.h, os.w, g.grad_input);
      }
    }
  }
  return g;
}

} // namespace multiception
