// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/batchnorm.hpp"
#include "multiception/ops.hpp"
#include "multiception/plan.hpp"
#include "multiception/random.hpp"
#include "multiception/variants.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace multiception {

template <typename T> struct LayerWeights {
  std::vector<VariantWeights<T>> convs;
  std::optional<VariantWeights<T>> shortcut;
};

/// Fully connected head on globally average-pooled features.
template <typename T> struct FcWeights {
  std::vector<T> weight; // classes x in, row-major
  std::vector<T> bias;   // classes
  std::size_t in = 0;
  std::size_t out = 0;
};

/// Weights of a whole plan. The same type holds gradients and optimizer
/// velocity (BN running statistics are unused there).
template <typename T> struct ModelWeights {
  std::vector<LayerWeights<T>> layers;
  FcWeights<T> fc;

  std::size_t param_count() const {
    std::size_t n = fc.weight.size() + fc.bias.size();
    for (const auto &l : layers) {
      for (const auto &c : l.convs) n += c.param_count();
      if (l.shortcut) n += l.shortcut->param_count();
    }
    return n;
  }
};

template <typename T> std::vector<ParamSlot<T>> collect_params(ModelWeights<T> &w) {
  std::vector<ParamSlot<T>> out;
  for (auto &l : w.layers) {
    for (auto &c : l.convs) collect_params(c, out);
    if (l.shortcut) collect_params(*l.shortcut, out);
  }
  out.push_back({std::span<T>(w.fc.weight), ParamRole::fc_weight});
  out.push_back({std::span<T>(w.fc.bias), ParamRole::fc_bias});
  return out;
}

/// Weights with zero kernels and FC, identity BN.
template <typename T> ModelWeights<T> model_zero(const LayerPlan &plan) {
  ModelWeights<T> w;
  for (const auto &l : plan.layers) {
    LayerWeights<T> lw;
    for (const auto &s : l.convs) lw.convs.push_back(variant_zero<T>(s.spec));
    if (l.shortcut) lw.shortcut = variant_zero<T>(*l.shortcut);
    if (l.kind == LayerKind::fc) {
      w.fc.in = l.in_c;
      w.fc.out = l.out_c;
      w.fc.weight.assign(l.in_c * l.out_c, T(0));
      w.fc.bias.assign(l.out_c, T(0));
    }
    w.layers.push_back(std::move(lw));
  }
  return w;
}

/// He-normal conv kernels, N(0, 1/in) FC weights, zero FC bias.
template <typename T> ModelWeights<T> init_model(const LayerPlan &plan, std::uint64_t seed) {
  Rng rng(seed);
  ModelWeights<T> w;
  for (const auto &l : plan.layers) {
    LayerWeights<T> lw;
    for (const auto &s : l.convs) lw.convs.push_back(variant_init<T>(s.spec, rng));
    if (l.shortcut) lw.shortcut = variant_init<T>(*l.shortcut, rng);
    if (l.kind == LayerKind::fc) {
      w.fc.in = l.in_c;
      w.fc.out = l.out_c;
      const double sd = std::sqrt(1.0 / static_cast<double>(l.in_c));
      w.fc.weight.resize(l.in_c * l.out_c);
      for (auto &v : w.fc.weight) v = static_cast<T>(rng.normal() * sd);
      w.fc.bias.assign(l.out_c, T(0));
    }
    w.layers.push_back(std::move(lw));
  }
  return w;
}

template <typename T> struct LayerCache {
  Tensor4<T> input;
  std::vector<VariantCache<T>> convs;
  std::optional<VariantCache<T>> shortcut;
  std::vector<Tensor4<T>> relu_inputs; // in the order the ReLUs were applied
};

template <typename T> struct ModelCache {
  std::vector<LayerCache<T>> layers;
  Tensor4<T> pooled; // (n, c, 1, 1) features entering the FC head
};

namespace detail {

template <typename T> Tensor4<T> relu_cached(Tensor4<T> x, LayerCache<T> *cache) {
  Tensor4<T> y = relu(x);
  if (cache) cache->relu_inputs.push_back(std::move(x));
  return y;
}

template <typename T>
Tensor4<T> fc_forward(const Tensor4<T> &pooled, const FcWeights<T> &fc) {
  if (pooled.c() != fc.in) throw DimensionError("fc expects " + std::to_string(fc.in) + " features");
  Tensor4<T> logits(Shape4{pooled.n(), fc.out, 1, 1});
  for (std::size_t n = 0; n < pooled.n(); ++n) {
    for (std::size_t o = 0; o < fc.out; ++o) {
      T acc = fc.bias[o];
      for (std::size_t i = 0; i < fc.in; ++i) acc += fc.weight[o * fc.in + i] * pooled(n, i, 0, 0);
      logits(n, o, 0, 0) = acc;
    }
  }
  return logits;
}

} // namespace detail

/**
 * Runs the plan: conv blocks are variant -> ReLU; residual blocks add the
 * (projected) shortcut before the final ReLU; the head is global average
 * pool -> FC. Returns (n, classes, 1, 1) logits.
 */
template <typename T>
Tensor4<T> forward_model(const LayerPlan &plan, ModelWeights<T> &w, const Tensor4<T> &input, Mode mode,
                         ModelCache<T> *cache = nullptr) {
  if (w.layers.size() != plan.layers.size()) throw DimensionError("weights do not match plan");
  if (input.c() != plan.input_channels) {
    throw DimensionError("model expects " + std::to_string(plan.input_channels) + " input channels, got " +
                         std::to_string(input.c()));
  }
  if (cache) {
    cache->layers.clear();
    cache->layers.resize(plan.layers.size());
  }
  Tensor4<T> x = input;
  for (std::size_t li = 0; li < plan.layers.size(); ++li) {
    const LayerSpec &l = plan.layers[li];
    LayerWeights<T> &lw = w.layers[li];
    LayerCache<T> *lc = cache ? &cache->layers[li] : nullptr;
    if (lc) {
      lc->input = x;
      lc->convs.resize(l.convs.size());
    }
    auto run = [&](std::size_t i, const Tensor4<T> &in) {
      return variant_forward(in, lw.convs[i], l.convs[i].spec, mode, lc ? &lc->convs[i] : nullptr);
    };
    switch (l.kind) {
    case LayerKind::conv_block:
      x = detail::relu_cached(run(0, x), lc);
      break;
    case LayerKind::residual_basic:
    case LayerKind::residual_bottleneck: {
      Tensor4<T> shortcut = x;
      if (l.shortcut) {
        if (lc) lc->shortcut.emplace();
        shortcut = variant_forward(x, *lw.shortcut, *l.shortcut, mode, lc ? &*lc->shortcut : nullptr);
      }
      Tensor4<T> h = x;
      for (std::size_t i = 0; i + 1 < l.convs.size(); ++i) h = detail::relu_cached(run(i, h), lc);
      h = run(l.convs.size() - 1, h);
      add_inplace(h, shortcut);
      x = detail::relu_cached(std::move(h), lc);
      break;
    }
    case LayerKind::pool:
      x = avg_pool(x, 2);
      break;
    case LayerKind::fc: {
      Tensor4<T> pooled = global_avg_pool(x);
      x = detail::fc_forward(pooled, w.fc);
      if (cache) cache->pooled = std::move(pooled);
      break;
    }
    }
  }
  return x;
}

template <typename T> struct ModelBackward {
  Tensor4<T> grad_input;
  ModelWeights<T> grads;
};

/// Backward pass through a cached forward_model call.
template <typename T>
ModelBackward<T> backward_model(const LayerPlan &plan, const ModelWeights<T> &w, const ModelCache<T> &cache,
                                const Tensor4<T> &grad_logits) {
  ModelBackward<T> out{Tensor4<T>(), model_zero<T>(plan)};
  Tensor4<T> g = grad_logits;
  for (std::size_t li = plan.layers.size(); li-- > 0;) {
    const LayerSpec &l = plan.layers[li];
    const LayerWeights<T> &lw = w.layers[li];
    const LayerCache<T> &lc = cache.layers[li];
    LayerWeights<T> &lg = out.grads.layers[li];
    auto back = [&](std::size_t i, const Tensor4<T> &dy) {
      auto r = variant_backward(lw.convs[i], l.convs[i].spec, lc.convs[i], dy);
      lg.convs[i] = std::move(r.grads);
      return std::move(r.grad_input);
    };
    switch (l.kind) {
    case LayerKind::conv_block:
      g = back(0, relu_backward(lc.relu_inputs[0], g));
      break;
    case LayerKind::residual_basic:
    case LayerKind::residual_bottleneck: {
      std::size_t r = lc.relu_inputs.size();
      Tensor4<T> dh = relu_backward(lc.relu_inputs[--r], g);
      Tensor4<T> dshortcut = dh;
      for (std::size_t i = l.convs.size(); i-- > 0;) {
        dh = back(i, dh);
        if (i > 0) dh = relu_backward(lc.relu_inputs[--r], dh);
      }
      if (l.shortcut) {
        auto s = variant_backward(*lw.shortcut, *l.shortcut, *lc.shortcut, dshortcut);
        lg.shortcut = std::move(s.grads);
        dshortcut = std::move(s.grad_input);
      }
      add_inplace(dh, dshortcut);
      g = std::move(dh);
      break;
    }
    case LayerKind::pool:
      g = avg_pool_backward(lc.input.shape(), g, 2);
      break;
    case LayerKind::fc: {
      const auto &fc = w.fc;
      auto &gfc = out.grads.fc;
      Tensor4<T> dpooled(cache.pooled.shape());
      for (std::size_t n = 0; n < g.n(); ++n) {
        for (std::size_t o = 0; o < fc.out; ++o) {
          const T dy = g(n, o, 0, 0);
          gfc.bias[o] += dy;
          for (std::size_t i = 0; i < fc.in; ++i) {
            gfc.weight[o * fc.in + i] += dy * cache.pooled(n, i, 0, 0);
            dpooled(n, i, 0, 0) += dy * fc.weight[o * fc.in + i];
          }
        }
      }
      g = global_avg_pool_backward(lc.input.shape(), dpooled);
      break;
    }
    }
  }
  out.grad_input = std::move(g);
  return out;
}

} // namespace multiception
