// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/errors.hpp"
#include "multiception/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace multiception {

enum class Mode { train, eval };

/**
 * Per-channel batch normalization state. gamma/beta are learnable;
 * running_mean/running_var are buffers updated in train mode as
 * running <- (1 - momentum) * running + momentum * batch_stat.
 */
template <typename T> struct BatchNormParams {
  std::vector<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNormParams() = default;
  explicit BatchNormParams(std::size_t channels)
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)), running_var(channels, T(1)) {}

  std::size_t channels() const { return gamma.size(); }
  std::size_t param_count() const { return gamma.size() + beta.size(); }

  void validate() const {
    const std::size_t c = gamma.size();
    if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
      throw DimensionError("batch norm parameter lengths disagree");
    }
    if (!(eps > T(0))) throw ConfigError("batch norm eps must be positive");
    if (!(momentum > T(0) && momentum < T(1))) throw ConfigError("batch norm momentum must be in (0,1)");
    for (T v : running_var) {
      if (v < T(0)) throw ConfigError("batch norm running_var must be non-negative");
    }
  }
};

/// Values saved by the forward pass for the backward pass.
template <typename T> struct BatchNormCache {
  Tensor4<T> normalized;     // x_hat
  std::vector<T> inv_std;    // 1 / sqrt(var + eps) actually used
  Mode mode = Mode::eval;
};

template <typename T>
Tensor4<T> batch_norm2d(const Tensor4<T> &input, BatchNormParams<T> &params, Mode mode,
                        BatchNormCache<T> *cache = nullptr) {
  params.validate();
  const std::size_t C = input.c();
  if (params.channels() != C) {
    throw DimensionError("batch norm has " + std::to_string(params.channels()) + " channels, input has " +
                         std::to_string(C));
  }
  const std::size_t N = input.n(), HW = input.h() * input.w();
  const std::size_t m = N * HW;
  if (mode == Mode::train && m < 2) throw DimensionError("train-mode batch norm needs n*h*w >= 2");

  Tensor4<T> out(input.shape());
  Tensor4<T> xhat(input.shape());
  std::vector<T> inv_std(C);

  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        for (T v : input.plane(n, c)) s += static_cast<double>(v);
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        for (T v : input.plane(n, c)) {
          const double d = static_cast<double>(v) - mu;
          ss += d * d;
        }
      }
      mean = static_cast<T>(mu);
      var = static_cast<T>(ss / static_cast<double>(m));
      const T unbiased = static_cast<T>(ss / static_cast<double>(m - 1));
      params.running_mean[c] = (T(1) - params.momentum) * params.running_mean[c] + params.momentum * mean;
      params.running_var[c] = (T(1) - params.momentum) * params.running_var[c] + params.momentum * unbiased;
    } else {
      mean = params.running_mean[c];
      var = params.running_var[c];
    }
    const T is = T(1) / std::sqrt(var + params.eps);
    inv_std[c] = is;
    const T g = params.gamma[c], b = params.beta[c];
    for (std::size_t n = 0; n < N; ++n) {
      auto src = input.plane(n, c);
      auto xh = xhat.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < HW; ++i) {
        xh[i] = (src[i] - mean) * is;
        dst[i] = g * xh[i] + b;
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return out;
}

template <typename T> struct BatchNormGrads {
  Tensor4<T> grad_input;
  std::vector<T> grad_gamma, grad_beta;
};

/**
 * Backward of batch_norm2d. In train mode the batch statistics depend on
 * the input, giving
 *   dx = gamma * inv_std / m * (m*dy - sum(dy) - x_hat * sum(dy * x_hat));
 * in eval mode the statistics are constants and dx = gamma * inv_std * dy.
 */
template <typename T>
BatchNormGrads<T> batch_norm2d_backward(const BatchNormParams<T> &params, const BatchNormCache<T> &cache,
                                        const Tensor4<T> &grad_output) {
  require_same_shape(cache.normalized, grad_output, "batch_norm2d_backward");
  const std::size_t C = grad_output.c(), N = grad_output.n(), HW = grad_output.h() * grad_output.w();
  const T m = static_cast<T>(N * HW);
  BatchNormGrads<T> g{Tensor4<T>(grad_output.shape()), std::vector<T>(C, T(0)), std::vector<T>(C, T(0))};
  for (std::size_t c = 0; c < C; ++c) {
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (std::size_t n = 0; n < N; ++n) {
      auto dy = grad_output.plane(n, c);
      auto xh = cache.normalized.plane(n, c);
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xh[i];
      }
    }
    g.grad_beta[c] = sum_dy;
    g.grad_gamma[c] = sum_dy_xhat;
    const T scale = params.gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < N; ++n) {
      auto dy = grad_output.plane(n, c);
      auto xh = cache.normalized.plane(n, c);
      auto dx = g.grad_input.plane(n, c);
      if (cache.mode == Mode::train) {
        for (std::size_t i = 0; i < HW; ++i) dx[i] = scale / m * (m * dy[i] - sum_dy - xh[i] * sum_dy_xhat);
      } else {
        for (std::size_t i = 0; i < HW; ++i) dx[i] = scale * dy[i];
      }
    }
  }
  return g;
}

} // namespace multiception
