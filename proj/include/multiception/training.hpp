// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/data.hpp"
#include "multiception/errors.hpp"
#include "multiception/model.hpp"
#include "multiception/plan.hpp"
#include "multiception/random.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace multiception {

struct TrainConfig {
  double momentum = 0.9;
  double weight_decay = 2e-4;
  double lr_max = 0.1;
  double lr_min = 5e-5;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool augment = false;
  bool shuffle = true;

  void validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(lr_min >= 0.0 && lr_min <= lr_max)) throw ConfigError("need 0 <= lr_min <= lr_max");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  }
};

/// Half-cosine from lr_max at epoch 0 to lr_min at epoch total_epochs - 1.
inline double cosine_lr(double epoch, std::size_t total_epochs, double lr_max, double lr_min) {
  if (total_epochs < 2) return lr_max;
  const double t = epoch / static_cast<double>(total_epochs - 1);
  if (t <= 0.0) return lr_max;
  if (t >= 1.0) return lr_min;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

/**
 * One Nesterov step on a flat buffer:
 *   g = grad + wd * p;  v = m * v + g;  p -= lr * (g + m * v)
 */
template <typename T>
void sgd_nesterov_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, double lr,
                       double momentum, double weight_decay) {
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw DimensionError("optimizer buffers disagree: params " + std::to_string(params.size()) + ", grads " +
                         std::to_string(grads.size()) + ", velocity " + std::to_string(velocity.size()));
  }
  if (momentum == 0.0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = weight_decay == 0.0 ? grads[i] : static_cast<T>(grads[i] + weight_decay * params[i]);
      velocity[i] = g;
      params[i] -= static_cast<T>(lr * g);
    }
    return;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]) + weight_decay * static_cast<double>(params[i]);
    const double v = momentum * static_cast<double>(velocity[i]) + g;
    velocity[i] = static_cast<T>(v);
    params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * (g + momentum * v));
  }
}

/// Zero-initialized velocity, one buffer per learnable tensor.
template <typename T> struct OptimizerState {
  ModelWeights<T> velocity;

  OptimizerState() = default;
  explicit OptimizerState(const LayerPlan &plan) : velocity(model_zero<T>(plan)) {
    for (auto &slot : collect_params(velocity)) std::fill(slot.values.begin(), slot.values.end(), T(0));
  }
};

/// Applies the step to every learnable tensor; decay only where decays(role).
template <typename T>
void sgd_nesterov_step(ModelWeights<T> &weights, ModelWeights<T> &grads, OptimizerState<T> &state, double lr,
                       const TrainConfig &cfg) {
  auto p = collect_params(weights);
  auto g = collect_params(grads);
  auto v = collect_params(state.velocity);
  if (p.size() != g.size() || p.size() != v.size()) throw DimensionError("optimizer tensors do not match weights");
  for (std::size_t i = 0; i < p.size(); ++i) {
    sgd_nesterov_step<T>(p[i].values, g[i].values, v[i].values, lr, cfg.momentum,
                         decays(p[i].role) ? cfg.weight_decay : 0.0);
  }
}

template <typename T> struct LossResult {
  double loss = 0.0;
  Tensor4<T> grad_logits;
  std::size_t correct = 0;
};

/// Mean softmax cross-entropy over the batch; logits are (n, classes, 1, 1).
template <typename T> LossResult<T> cross_entropy_loss(const Tensor4<T> &logits, std::span<const int> labels) {
  const std::size_t n = logits.n(), k = logits.c();
  if (logits.h() != 1 || logits.w() != 1) throw DimensionError("logits must be (n, classes, 1, 1)");
  if (labels.size() != n) throw DimensionError("label count differs from batch size");
  LossResult<T> r{0.0, Tensor4<T>(logits.shape()), 0};
  std::vector<double> p(k);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
    double mx = logits(i, 0, 0, 0);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits(i, j, 0, 0) > mx) {
        mx = logits(i, j, 0, 0);
        arg = j;
      }
    }
    if (arg == static_cast<std::size_t>(y)) ++r.correct;
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += p[j] = std::exp(static_cast<double>(logits(i, j, 0, 0)) - mx);
    r.loss += std::log(z) - (static_cast<double>(logits(i, y, 0, 0)) - mx);
    for (std::size_t j = 0; j < k; ++j) {
      const double onehot = j == static_cast<std::size_t>(y) ? 1.0 : 0.0;
      r.grad_logits(i, j, 0, 0) = static_cast<T>((p[j] / z - onehot) / static_cast<double>(n));
    }
  }
  r.loss /= static_cast<double>(n);
  return r;
}

template <typename T> LossResult<T> cross_entropy_loss(const Tensor4<T> &logits, const std::vector<int> &labels) {
  return cross_entropy_loss(logits, std::span<const int>(labels));
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;     // mean over examples
  double accuracy = 0.0; // fraction in [0, 1], measured on the training forward passes
};

/// `epoch=3 lr=0.0951 loss=0.6931 accuracy=0.5000`
inline std::string format_metrics(const EpochMetrics &m) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "epoch=" << m.epoch << " lr=" << m.lr << " loss=" << m.loss << " accuracy=" << m.accuracy;
  return os.str();
}

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, const TrainConfig &cfg, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (cfg.shuffle) {
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

inline Tensor4<float> gather(const Tensor4<float> &images, std::span<const std::size_t> idx) {
  const Shape4 s = images.shape();
  const std::size_t per = s.c * s.h * s.w;
  Tensor4<float> out(Shape4{idx.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float *src = images.data() + idx[i] * per;
    std::copy(src, src + per, out.data() + i * per);
  }
  return out;
}

} // namespace detail

/**
 * One pass over `data` in mini-batches at cosine_lr(epoch): train-mode
 * forward, cross-entropy, backward, Nesterov step. Batch order and
 * augmentation depend only on (cfg.seed, epoch).
 */
inline EpochMetrics train_epoch(const LayerPlan &plan, ModelWeights<float> &weights, const Dataset &data,
                                const TrainConfig &cfg, OptimizerState<float> &state, std::size_t epoch) {
  cfg.validate();
  if (data.size() == 0) throw InputError("empty dataset");
  EpochMetrics m;
  m.epoch = epoch;
  m.lr = cosine_lr(static_cast<double>(epoch), cfg.epochs, cfg.lr_max, cfg.lr_min);
  const auto order = detail::epoch_order(data.size(), cfg, epoch);
  Rng aug_rng(cfg.seed ^ (0xA5A5A5A5ULL + epoch));

  double loss_sum = 0.0;
  std::size_t correct = 0, seen = 0;
  for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
    const std::size_t e = std::min(order.size(), b + cfg.batch_size);
    const std::span<const std::size_t> idx(order.data() + b, e - b);
    Tensor4<float> x = detail::gather(data.images, idx);
    if (cfg.augment) x = augment(x, aug_rng);
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) y[i] = data.labels[idx[i]];

    ModelCache<float> cache;
    const auto logits = forward_model(plan, weights, x, Mode::train, &cache);
    const auto res = cross_entropy_loss(logits, y);
    auto back = backward_model(plan, weights, cache, res.grad_logits);
    sgd_nesterov_step(weights, back.grads, state, m.lr, cfg);

    loss_sum += res.loss * static_cast<double>(idx.size());
    correct += res.correct;
    seen += idx.size();
  }
  m.loss = loss_sum / static_cast<double>(seen);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
  return m;
}

/// Eval-mode loss and accuracy without updating anything.
inline EpochMetrics evaluate(const LayerPlan &plan, ModelWeights<float> &weights, const Dataset &data,
                             std::size_t batch_size) {
  if (data.size() == 0) throw InputError("empty dataset");
  EpochMetrics m;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const std::size_t e = std::min(data.size(), b + batch_size);
    idx.resize(e - b);
    std::iota(idx.begin(), idx.end(), b);
    const auto x = detail::gather(data.images, idx);
    const std::vector<int> y(data.labels.begin() + static_cast<std::ptrdiff_t>(b),
                             data.labels.begin() + static_cast<std::ptrdiff_t>(e));
    const auto r = cross_entropy_loss(forward_model(plan, weights, x, Mode::eval), y);
    loss_sum += r.loss * static_cast<double>(e - b);
    correct += r.correct;
  }
  m.loss = loss_sum / static_cast<double>(data.size());
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return m;
}

/// Runs cfg.epochs epochs from a fresh init; `on_epoch` sees each epoch's metrics.
template <typename F>
std::vector<EpochMetrics> train(const LayerPlan &plan, ModelWeights<float> &weights, const Dataset &data,
                                const TrainConfig &cfg, F &&on_epoch) {
  OptimizerState<float> state(plan);
  std::vector<EpochMetrics> log;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    log.push_back(train_epoch(plan, weights, data, cfg, state, e));
    on_epoch(log.back());
  }
  return log;
}

} // namespace multiception
