// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/batchnorm.hpp"
#include "multiception/conv.hpp"
#include "multiception/model.hpp"
#include "multiception/ops.hpp"
#include "multiception/plan.hpp"
#include "multiception/random.hpp"
#include "multiception/training.hpp"
#include "multiception/variants.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace multiception {

struct GradcheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(floor, |a|, |n|); the floor keeps
  // near-zero gradients from turning round-off into large ratios.
  double floor = 1e-3;
  std::size_t coords_per_tensor = 24;
};

/// Loss value plus whether a non-differentiable point (e.g. a ReLU kink) was crossed.
struct Probe {
  double value = 0.0;
  bool kink = false;
};

struct FdResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

inline double fd_relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({floor, std::abs(analytic), std::abs(numeric)});
}

/**
 * Compares `analytic` against central differences of `loss` with respect to
 * `x`, on up to coords_per_tensor randomly chosen coordinates (all of them
 * when the tensor is small). `x` is restored afterwards.
 */
inline FdResult check_coords(std::span<double> x, std::span<const double> analytic,
                             const std::function<Probe()> &loss, Rng &rng, const GradcheckOptions &opt) {
  if (x.size() != analytic.size()) throw DimensionError("gradient length differs from parameter length");
  std::vector<std::size_t> coords(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) coords[i] = i;
  if (coords.size() > opt.coords_per_tensor) {
    for (std::size_t i = 0; i < opt.coords_per_tensor; ++i) std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(opt.coords_per_tensor);
  }
  FdResult r;
  for (std::size_t i : coords) {
    const double saved = x[i];
    x[i] = saved + opt.step;
    const Probe plus = loss();
    x[i] = saved - opt.step;
    const Probe minus = loss();
    x[i] = saved;
    if (plus.kink || minus.kink) {
      ++r.skipped;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * opt.step);
    r.max_rel_error = std::max(r.max_rel_error, fd_relative_error(analytic[i], numeric, opt.floor));
    ++r.checked;
  }
  return r;
}

/// Per-operation summary over all cases.
struct GradReport {
  std::string op;
  std::size_t cases = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;

  bool passed() const { return max_rel_error < tolerance; }
  void merge(const FdResult &r) {
    checked += r.checked;
    skipped += r.skipped;
    max_rel_error = std::max(max_rel_error, r.max_rel_error);
  }
};

namespace detail {

inline Tensor4<double> random_tensor(Shape4 s, Rng &rng, double scale = 1.0) {
  Tensor4<double> t(s);
  for (auto &v : t.span()) v = rng.normal() * scale;
  return t;
}

inline std::vector<double> random_vector(std::size_t n, Rng &rng, double lo, double hi) {
  std::vector<double> v(n);
  for (auto &x : v) x = rng.uniform(lo, hi);
  return v;
}

inline double weighted_sum(const Tensor4<double> &y, const Tensor4<double> &r) {
  require_same_shape(y, r, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

inline std::function<Probe()> smooth(std::function<double()> f) {
  return [f = std::move(f)] { return Probe{f(), false}; };
}

template <typename T> std::span<const T> cspan(const std::vector<T> &v) { return std::span<const T>(v); }

} // namespace detail

/// Convolution: input, kernel and bias gradients; groups 1 or C, k in {1,3,5,7}, stride 1 or 2.
inline GradReport gradcheck_conv(std::size_t cases, Rng &rng, const GradcheckOptions &opt = {}) {
  GradReport rep{"conv2d", cases};
  rep.tolerance = opt.tolerance;
  for (std::size_t t = 0; t < cases; ++t) {
    const std::size_t c = 1 + rng.below(4);
    const bool depthwise = rng.coin();
    const std::size_t out_c = depthwise ? c : 1 + rng.below(4);
    const std::size_t k = std::array<std::size_t, 4>{1, 3, 5, 7}[rng.below(4)];
    const std::size_t stride = 1 + rng.below(2);
    const std::size_t pad = padding_for_kernel(k);
    const std::size_t hw = 3 + rng.below(4);
    ConvWeights<double> w(out_c, c, k, depthwise ? c : 1, true);
    for (auto &v : w.kernel.span()) v = rng.normal();
    for (auto &v : *w.bias) v = rng.normal();
    auto x = detail::random_tensor({1 + rng.below(2), c, hw, hw}, rng);
    const auto r = detail::random_tensor(conv2d_naive(x, w, stride, pad).shape(), rng);
    const auto g = conv2d_backward(x, w, r, stride, pad);
    auto loss = detail::smooth([&] { return detail::weighted_sum(conv2d_fast(x, w, stride, pad), r); });
    rep.merge(check_coords(x.span(), g.grad_input.span(), loss, rng, opt));
    rep.merge(check_coords(w.kernel.span(), g.grad_kernel.span(), loss, rng, opt));
    rep.merge(check_coords(std::span<double>(*w.bias), detail::cspan(g.grad_bias), loss, rng, opt));
  }
  return rep;
}

/// Batch norm in the given mode: input, gamma and beta gradients.
inline GradReport gradcheck_batchnorm(Mode mode, std::size_t cases, Rng &rng, const GradcheckOptions &opt = {}) {
  GradReport rep{mode == Mode::train ? "batch_norm2d[train]" : "batch_norm2d[eval]", cases};
  rep.tolerance = opt.tolerance;
  for (std::size_t t = 0; t < cases; ++t) {
    const std::size_t c = 1 + rng.below(3);
    BatchNormParams<double> p(c);
    p.gamma = detail::random_vector(c, rng, 0.5, 1.5);
    p.beta = detail::random_vector(c, rng, -0.5, 0.5);
    p.running_mean = detail::random_vector(c, rng, -0.5, 0.5);
    p.running_var = detail::random_vector(c, rng, 0.5, 2.0);
    auto x = detail::random_tensor({2 + rng.below(2), c, 2 + rng.below(3), 2 + rng.below(3)}, rng);
    const auto r = detail::random_tensor(x.shape(), rng);
    BatchNormCache<double> cache;
    auto scratch = p;
    batch_norm2d(x, scratch, mode, &cache);
    const auto g = batch_norm2d_backward(p, cache, r);
    auto loss = detail::smooth([&] {
      auto q = p;
      return detail::weighted_sum(batch_norm2d(x, q, mode), r);
    });
    rep.merge(check_coords(x.span(), g.grad_input.span(), loss, rng, opt));
    rep.merge(check_coords(std::span<double>(p.gamma), detail::cspan(g.grad_gamma), loss, rng, opt));
    rep.merge(check_coords(std::span<double>(p.beta), detail::cspan(g.grad_beta), loss, rng, opt));
  }
  return rep;
}

/// ReLU away from its kink (|x| >= 0.05).
inline GradReport gradcheck_relu(std::size_t cases, Rng &rng, const GradcheckOptions &opt = {}) {
  GradReport rep{"relu", cases};
  rep.tolerance = opt.tolerance;
  for (std::size_t t = 0; t < cases; ++t) {
    auto x = detail::random_tensor({1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)}, rng);
    for (auto &v : x.span()) v = (v < 0 ? -1.0 : 1.0) * (0.05 + std::abs(v));
    const auto r = detail::random_tensor(x.shape(), rng);
    const auto g = relu_backward(x, r);
    rep.merge(check_coords(x.span(), g.span(), detail::smooth([&] { return detail::weighted_sum(relu(x), r); }), rng,
                           opt));
  }
  return rep;
}

/// Channel concatenation of two or three parts.
inline GradReport gradcheck_concat(std::size_t cases, Rng &rng, const GradcheckOptions &opt = {}) {
  GradReport rep{"concat_channels", cases};
  rep.tolerance = opt.tolerance;
  for (std::size_t t = 0; t < cases; ++t) {
    const std::size_t n = 1 + rng.below(2), h = 1 + rng.below(4), w = 1 + rng.below(4);
    std::vector<Tensor4<double>> parts;
    std::vector<std::size_t> widths;
    for (std::size_t i = 0, m = 2 + rng.below(2); i < m; ++i) {
      widths.push_back(1 + rng.below(3));
      parts.push_back(detail::random_tensor({n, widths.back(), h, w}, rng));
    }
    const auto r = detail::random_tensor(concat_channels(parts).shape(), rng);
    const auto grads = split_channels(r, widths);
    auto loss = detail::smooth([&] { return detail::weighted_sum(concat_channels(parts), r); });
    for (std::size_t i = 0; i < parts.size(); ++i) rep.merge(check_coords(parts[i].span(), grads[i].span(), loss, rng, opt));
  }
  return rep;
}

/// Global average pool and 2x2 average pool.
inline GradReport gradcheck_pools(std::size_t cases, Rng &rng, const GradcheckOptions &opt = {}) {
  GradReport rep{"avg_pool", cases};
  rep.tolerance = opt.tolerance;
  for (std::size_t t = 0; t < cases; ++t) {
    auto x = detail::random_tensor({1 + rng.below(2), 1 + rng.below(3), 2 * (1 + rng.below(3)), 2 * (1 + rng.below(3))},
                                   rng);
    const auto rg = detail::random_tensor(global_avg_pool(x).shape(), rng);
    rep.merge(check_coords(x.span(), global_avg_pool_backward(x.shape(), rg).span(),
                           detail::smooth([&] { return detail::weighted_sum(global_avg_pool(x), rg); }), rng, opt));
    const auto ra = detail::random_tensor(avg_pool(x, 2).shape(), rng);
    rep.merge(check_coords(x.span(), avg_pool_backward(x.shape(), ra, 2).span(),
                           detail::smooth([&] { return detail::weighted_sum(avg_pool(x, 2), ra); }), rng, opt));
  }
  return rep;
}

namespace detail {

inline ConvVariantSpec random_variant_spec(Variant v, Rng &rng) {
  ConvVariantSpec s;
  s.variant = v;
  s.in_c = 2 + rng.below(3);
  s.out_c = 1 + rng.below(4);
  s.stride = 1 + rng.below(2);
  if (v == Variant::standard || v == Variant::dsconv) {
    s.kernels = KernelSet{std::array<std::size_t, 3>{1, 3, 5}[rng.below(3)]};
  } else {
    static const std::vector<KernelSet> sets = {{3}, {3, 5}, {1, 3}, {3, 5, 7}, {1, 3, 5, 7}};
    do {
      s.kernels = sets[rng.below(sets.size())];
    } while (v == Variant::mixconv && s.kernels.size() > s.in_c);
  }
  return s;
}

template <typename T> void perturb_bn(BatchNormParams<T> &bn, Rng &rng) {
  for (auto &v : bn.gamma) v = static_cast<T>(rng.uniform(0.5, 1.5));
  for (auto &v : bn.beta) v = static_cast<T>(rng.uniform(-0.5, 0.5));
  for (auto &v : bn.running_mean) v = static_cast<T>(rng.uniform(-0.5, 0.5));
  for (auto &v : bn.running_var) v = static_cast<T>(rng.uniform(0.5, 2.0));
}

template <typename T> void perturb_variant(VariantWeights<T> &w, Rng &rng) {
  if (w.mid_bn) perturb_bn(*w.mid_bn, rng);
  perturb_bn(w.out_bn, rng);
}

} // namespace detail

/// One variant block (train-mode BN), every learnable tensor plus the input.
inline GradReport gradcheck_variant(Variant v, std::size_t cases, Rng &rng, const GradcheckOptions &opt = {}) {
  GradReport rep{std::string(to_string(v)) + "_block", cases};
  rep.tolerance = opt.tolerance;
  for (std::size_t t = 0; t < cases; ++t) {
    const auto spec = detail::random_variant_spec(v, rng);
    auto w = variant_init<double>(spec, rng);
    detail::perturb_variant(w, rng);
    const std::size_t hw = 3 + rng.below(3);
    auto x = detail::random_tensor({2, spec.in_c, hw, hw}, rng);
    const Mode mode = rng.coin() ? Mode::train : Mode::eval;
    VariantCache<double> cache;
    auto scratch = w;
    const auto y = variant_forward(x, scratch, spec, mode, &cache);
    const auto r = detail::random_tensor(y.shape(), rng);
    auto back = variant_backward(w, spec, cache, r);
    auto loss = detail::smooth([&] {
      auto q = w;
      return detail::weighted_sum(variant_forward(x, q, spec, mode), r);
    });
    rep.merge(check_coords(x.span(), back.grad_input.span(), loss, rng, opt));
    auto ps = [&] {
      std::vector<ParamSlot<double>> s;
      collect_params(w, s);
      return s;
    }();
    std::vector<ParamSlot<double>> gs;
    collect_params(back.grads, gs);
    for (std::size_t i = 0; i < ps.size(); ++i) rep.merge(check_coords(ps[i].values, gs[i].values, loss, rng, opt));
  }
  return rep;
}

/// Softmax cross-entropy with respect to the logits.
inline GradReport gradcheck_cross_entropy(std::size_t cases, Rng &rng, GradcheckOptions opt = {}) {
  opt.tolerance = std::min(opt.tolerance, 1e-6);
  GradReport rep{"cross_entropy", cases};
  rep.tolerance = opt.tolerance;
  for (std::size_t t = 0; t < cases; ++t) {
    const std::size_t n = 1 + rng.below(4), k = 2 + rng.below(5);
    auto logits = detail::random_tensor({n, k, 1, 1}, rng, 2.0);
    std::vector<int> labels(n);
    for (auto &l : labels) l = static_cast<int>(rng.below(k));
    const auto g = cross_entropy_loss(logits, labels).grad_logits;
    rep.merge(check_coords(logits.span(), g.span(),
                           detail::smooth([&] { return cross_entropy_loss(logits, labels).loss; }), rng, opt));
  }
  return rep;
}

/// A two-layer network of the given variant (conv block, conv block, pool + FC head).
inline LayerPlan two_layer_plan(Variant v, std::size_t in_c, std::size_t width, std::size_t classes) {
  ModelConfig cfg;
  cfg.name = "two_layer_" + std::string(to_string(v));
  cfg.input_channels = in_c;
  cfg.classes = classes;
  cfg.conv_mode = v;
  cfg.stages = {{LayerKind::conv_block, 1, width, 1}, {LayerKind::conv_block, 1, width, 2}};
  return build_plan(cfg);
}

namespace detail {

/// Sign pattern of every ReLU input, for detecting kink crossings.
template <typename T> std::vector<bool> relu_signs(const ModelCache<T> &cache) {
  std::vector<bool> s;
  for (const auto &l : cache.layers)
    for (const auto &t : l.relu_inputs)
      for (T v : t.span()) s.push_back(v > T(0));
  return s;
}

} // namespace detail

/**
 * Whole-model check through cross-entropy: input, every learnable tensor and
 * the FC head. Probes whose ReLU sign pattern differs from the base point
 * are skipped and counted.
 */
inline GradReport gradcheck_model(const LayerPlan &plan, std::size_t cases, Rng &rng, const GradcheckOptions &opt = {},
                                  const std::string &label = "model") {
  GradReport rep{label, cases};
  rep.tolerance = opt.tolerance;
  for (std::size_t t = 0; t < cases; ++t) {
    auto w = init_model<double>(plan, rng.bits());
    for (auto &l : w.layers)
      for (auto &c : l.convs) detail::perturb_variant(c, rng);
    for (auto &b : w.fc.bias) b = rng.normal() * 0.1;
    const std::size_t hw = 4 + 2 * rng.below(2);
    auto x = detail::random_tensor({2, plan.input_channels, hw, hw}, rng);
    std::vector<int> labels(2);
    for (auto &l : labels) l = static_cast<int>(rng.below(plan.classes));
    const Mode mode = rng.coin() ? Mode::train : Mode::eval;

    ModelCache<double> cache;
    auto scratch = w;
    const auto logits = forward_model(plan, scratch, x, mode, &cache);
    const auto base = detail::relu_signs(cache);
    const auto back = backward_model(plan, w, cache, cross_entropy_loss(logits, labels).grad_logits);

    std::function<Probe()> loss = [&] {
      auto q = w;
      ModelCache<double> c;
      const double v = cross_entropy_loss(forward_model(plan, q, x, mode, &c), labels).loss;
      return Probe{v, detail::relu_signs(c) != base};
    };
    rep.merge(check_coords(x.span(), back.grad_input.span(), loss, rng, opt));
    auto ps = collect_params(w);
    auto grads = back.grads;
    auto gs = collect_params(grads);
    for (std::size_t i = 0; i < ps.size(); ++i) rep.merge(check_coords(ps[i].values, gs[i].values, loss, rng, opt));
  }
  return rep;
}

/// Every suite in order; `cases` random cases each.
inline std::vector<GradReport> run_gradcheck(std::uint64_t seed, std::size_t cases, const GradcheckOptions &opt = {}) {
  Rng rng(seed);
  std::vector<GradReport> out;
  out.push_back(gradcheck_conv(cases, rng, opt));
  out.push_back(gradcheck_batchnorm(Mode::train, cases, rng, opt));
  out.push_back(gradcheck_batchnorm(Mode::eval, cases, rng, opt));
  out.push_back(gradcheck_relu(cases, rng, opt));
  out.push_back(gradcheck_concat(cases, rng, opt));
  out.push_back(gradcheck_pools(cases, rng, opt));
  for (Variant v : kAllVariants) out.push_back(gradcheck_variant(v, cases, rng, opt));
  out.push_back(gradcheck_cross_entropy(cases, rng, opt));
  out.push_back(gradcheck_model(two_layer_plan(Variant::multiception, 2, 3, 3), cases, rng, opt, "multiception_2layer"));
  return out;
}

} // namespace multiception
