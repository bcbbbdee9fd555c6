// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/batchnorm.hpp"
#include "multiception/conv.hpp"
#include "multiception/errors.hpp"
#include "multiception/ops.hpp"
#include "multiception/random.hpp"
#include "multiception/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace multiception {

/// Same-padding for an odd kernel: {1:0, 3:1, 5:2, 7:3}.
inline std::size_t padding_for_kernel(std::size_t k) {
  if (!is_supported_kernel(k)) throw ConfigError("no padding rule for kernel size " + std::to_string(k));
  return (k - 1) / 2;
}

/// Ordered set of distinct kernel sizes from {1,3,5,7}, strictly ascending.
class KernelSet {
public:
  KernelSet() : sizes_{3} {}
  KernelSet(std::initializer_list<std::size_t> sizes) : KernelSet(std::vector<std::size_t>(sizes)) {}
  explicit KernelSet(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.empty() || sizes_.size() > 4) throw ConfigError("kernel set must hold 1 to 4 sizes");
    for (std::size_t i = 0; i < sizes_.size(); ++i) {
      if (!is_supported_kernel(sizes_[i])) {
        throw ConfigError("kernel size " + std::to_string(sizes_[i]) + " not in {1,3,5,7}");
      }
      if (i > 0 && sizes_[i] <= sizes_[i - 1]) throw ConfigError("kernel sizes must be strictly increasing");
    }
  }

  std::span<const std::size_t> sizes() const noexcept { return sizes_; }
  std::size_t size() const noexcept { return sizes_.size(); }
  std::size_t operator[](std::size_t i) const { return sizes_[i]; }
  auto begin() const noexcept { return sizes_.begin(); }
  auto end() const noexcept { return sizes_.end(); }

  std::size_t sum_of_squares() const {
    std::size_t s = 0;
    for (auto k : sizes_) s += k * k;
    return s;
  }

  std::string str() const {
    std::string s = "{";
    for (std::size_t i = 0; i < sizes_.size(); ++i) s += (i ? "," : "") + std::to_string(sizes_[i]);
    return s + "}";
  }

  bool operator==(const KernelSet &) const = default;

private:
  std::vector<std::size_t> sizes_;
};

enum class Variant { standard, dsconv, mixconv, multiception };

inline std::string_view to_string(Variant v) {
  switch (v) {
  case Variant::standard: return "standard";
  case Variant::dsconv: return "dsconv";
  case Variant::mixconv: return "mixconv";
  case Variant::multiception: return "multiception";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "standard") return Variant::standard;
  if (s == "dsconv") return Variant::dsconv;
  if (s == "mixconv") return Variant::mixconv;
  if (s == "multiception") return Variant::multiception;
  throw ConfigError("unknown convolution variant '" + std::string(s) + "'");
}

inline constexpr Variant kAllVariants[] = {Variant::standard, Variant::dsconv, Variant::mixconv,
                                           Variant::multiception};

/// One convolution layer: which variant, its channels, kernel sizes and stride.
struct ConvVariantSpec {
  Variant variant = Variant::standard;
  std::size_t in_c = 1;
  std::size_t out_c = 1;
  KernelSet kernels;
  std::size_t stride = 1;
  // ReLU between the intermediate BN and the pointwise conv. Off reproduces
  // the literal depthwise -> concat -> BN -> pointwise -> BN sequence.
  bool inner_relu = false;

  void validate() const {
    if (in_c == 0 || out_c == 0) throw ConfigError("channel counts must be positive");
    if (stride == 0) throw ConfigError("stride must be positive");
    if ((variant == Variant::standard || variant == Variant::dsconv) && kernels.size() != 1) {
      throw ConfigError(std::string(to_string(variant)) + " takes exactly one kernel size, got " + kernels.str());
    }
    if (variant == Variant::mixconv && kernels.size() > in_c) {
      throw ConfigError("mixconv with " + std::to_string(kernels.size()) + " kernel sizes needs at least that many "
                        "input channels, got " + std::to_string(in_c));
    }
  }

  /// Channels entering the pointwise conv.
  std::size_t intermediate_channels() const {
    return variant == Variant::multiception ? in_c * kernels.size() : in_c;
  }
};

/// Contiguous channel groups for MixConv; remainder channels go one each to
/// the earliest groups.
inline std::vector<std::size_t> mixconv_partition(std::size_t channels, std::size_t groups) {
  if (groups == 0 || groups > channels) {
    throw ConfigError("cannot split " + std::to_string(channels) + " channels into " + std::to_string(groups) +
                      " groups");
  }
  std::vector<std::size_t> widths(groups, channels / groups);
  for (std::size_t i = 0; i < channels % groups; ++i) ++widths[i];
  return widths;
}

/**
 * Learnable state of one variant block.
 *
 * spatial    standard: one dense k x k conv; otherwise one depthwise conv per
 *            kernel size (for MixConv, per channel group)
 * pointwise  1x1 conv to out_c (absent for standard)
 * mid_bn     BN over the intermediate channels (absent for standard)
 * out_bn     BN over out_c
 */
template <typename T> struct VariantWeights {
  std::vector<ConvWeights<T>> spatial;
  std::optional<ConvWeights<T>> pointwise;
  std::optional<BatchNormParams<T>> mid_bn;
  BatchNormParams<T> out_bn;

  std::size_t param_count() const {
    std::size_t n = out_bn.param_count();
    for (const auto &c : spatial) n += c.param_count();
    if (pointwise) n += pointwise->param_count();
    if (mid_bn) n += mid_bn->param_count();
    return n;
  }
};

enum class ParamRole { conv_kernel, conv_bias, bn_gamma, bn_beta, fc_weight, fc_bias };

inline bool decays(ParamRole r) { return r == ParamRole::conv_kernel || r == ParamRole::fc_weight; }

template <typename T> struct ParamSlot {
  std::span<T> values;
  ParamRole role;
};

template <typename T> void collect_params(ConvWeights<T> &w, std::vector<ParamSlot<T>> &out) {
  out.push_back({w.kernel.span(), ParamRole::conv_kernel});
  if (w.bias) out.push_back({std::span<T>(*w.bias), ParamRole::conv_bias});
}

template <typename T> void collect_params(BatchNormParams<T> &bn, std::vector<ParamSlot<T>> &out) {
  out.push_back({std::span<T>(bn.gamma), ParamRole::bn_gamma});
  out.push_back({std::span<T>(bn.beta), ParamRole::bn_beta});
}

template <typename T> void collect_params(VariantWeights<T> &w, std::vector<ParamSlot<T>> &out) {
  for (auto &c : w.spatial) collect_params(c, out);
  if (w.mid_bn) collect_params(*w.mid_bn, out);
  if (w.pointwise) collect_params(*w.pointwise, out);
  collect_params(w.out_bn, out);
}

namespace detail {

template <typename T> void he_normal(ConvWeights<T> &w, Rng &rng) {
  const double fan_in = static_cast<double>(w.kernel.c() * w.k() * w.k());
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto &v : w.kernel.span()) v = static_cast<T>(rng.normal() * stddev);
}

/// Depthwise branch weights in the order the block concatenates them.
inline std::vector<std::pair<std::size_t, std::size_t>> branch_layout(const ConvVariantSpec &spec) {
  std::vector<std::pair<std::size_t, std::size_t>> layout; // (channels, k)
  if (spec.variant == Variant::mixconv) {
    auto widths = mixconv_partition(spec.in_c, spec.kernels.size());
    for (std::size_t i = 0; i < widths.size(); ++i) layout.emplace_back(widths[i], spec.kernels[i]);
  } else {
    for (auto k : spec.kernels) layout.emplace_back(spec.in_c, k);
  }
  return layout;
}

} // namespace detail

/// Allocates weights shaped for `spec` with every value at its neutral default
/// (zero kernels, gamma 1, beta 0, running stats (0,1)).
template <typename T> VariantWeights<T> variant_zero(const ConvVariantSpec &spec) {
  spec.validate();
  VariantWeights<T> w;
  if (spec.variant == Variant::standard) {
    w.spatial.emplace_back(spec.out_c, spec.in_c, spec.kernels[0], 1);
  } else {
    for (auto [channels, k] : detail::branch_layout(spec)) w.spatial.emplace_back(channels, channels, k, channels);
    w.mid_bn.emplace(spec.intermediate_channels());
    w.pointwise.emplace(spec.out_c, spec.intermediate_channels(), 1, 1);
  }
  w.out_bn = BatchNormParams<T>(spec.out_c);
  return w;
}

/// He-normal conv kernels (std = sqrt(2 / fan_in)), identity BN.
template <typename T> VariantWeights<T> variant_init(const ConvVariantSpec &spec, Rng &rng) {
  VariantWeights<T> w = variant_zero<T>(spec);
  for (auto &c : w.spatial) detail::he_normal(c, rng);
  if (w.pointwise) detail::he_normal(*w.pointwise, rng);
  return w;
}

template <typename T> VariantWeights<T> variant_init(const ConvVariantSpec &spec, std::uint64_t seed) {
  Rng rng(seed);
  return variant_init<T>(spec, rng);
}

/// Activations retained by variant_forward for variant_backward.
template <typename T> struct VariantCache {
  Tensor4<T> input;
  std::vector<Shape4> branch_shapes;
  BatchNormCache<T> mid_bn;
  Tensor4<T> mid_bn_out;   // intermediate BN output (pre inner ReLU)
  Tensor4<T> pointwise_in; // input to the pointwise conv
  BatchNormCache<T> out_bn;
};

namespace detail {

template <typename T> void check_weights(const VariantWeights<T> &w, const ConvVariantSpec &spec) {
  spec.validate();
  const auto layout = branch_layout(spec);
  if (spec.variant == Variant::standard) {
    if (w.spatial.size() != 1 || w.spatial[0].groups != 1 || w.spatial[0].in_channels() != spec.in_c ||
        w.spatial[0].out_channels() != spec.out_c || w.spatial[0].k() != spec.kernels[0]) {
      throw DimensionError("standard conv weights do not match the variant layout");
    }
    return;
  }
  if (w.spatial.size() != layout.size()) throw DimensionError("branch count does not match kernel set");
  std::vector<std::size_t> ks;
  std::size_t in_total = 0;
  for (const auto &c : w.spatial) {
    if (c.groups != c.in_channels() || c.out_channels() != c.in_channels()) {
      throw DimensionError("depthwise branch must have groups == in_channels == out_channels");
    }
    ks.push_back(c.k());
    in_total += c.in_channels();
  }
  std::sort(ks.begin(), ks.end());
  if (!std::equal(ks.begin(), ks.end(), spec.kernels.begin(), spec.kernels.end())) {
    throw DimensionError("branch kernel sizes do not match the variant kernel set " + spec.kernels.str());
  }
  const std::size_t expect_in = spec.variant == Variant::mixconv ? spec.in_c : spec.in_c * layout.size();
  if (in_total != expect_in) throw DimensionError("branch channel total does not match the variant layout");
  if (!w.pointwise || !w.mid_bn) throw DimensionError("separable variant needs pointwise and mid_bn weights");
  if (w.pointwise->k() != 1 || w.pointwise->groups != 1 || w.pointwise->in_channels() != spec.intermediate_channels() ||
      w.pointwise->out_channels() != spec.out_c) {
    throw DimensionError("pointwise conv weights do not match the variant layout");
  }
}

} // namespace detail

/**
 * Runs any variant block. Separable variants follow
 *   depthwise branch(es) -> concat -> BN -> [ReLU] -> pointwise 1x1 -> BN;
 * standard is conv -> BN. Every spatial conv uses same-padding and
 * spec.stride; the pointwise conv always uses stride 1.
 */
template <typename T>
Tensor4<T> variant_forward(const Tensor4<T> &input, VariantWeights<T> &w, const ConvVariantSpec &spec,
                           Mode mode = Mode::eval, VariantCache<T> *cache = nullptr) {
  detail::check_weights(w, spec);
  if (input.c() != spec.in_c) {
    throw DimensionError("block expects " + std::to_string(spec.in_c) + " input channels, got " +
                         std::to_string(input.c()));
  }
  if (cache) cache->input = input;

  if (spec.variant == Variant::standard) {
    const auto &c = w.spatial[0];
    Tensor4<T> y = conv2d_fast(input, c, spec.stride, padding_for_kernel(c.k()));
    return batch_norm2d(y, w.out_bn, mode, cache ? &cache->out_bn : nullptr);
  }

  std::vector<Tensor4<T>> branches;
  branches.reserve(w.spatial.size());
  if (spec.variant == Variant::mixconv) {
    std::vector<std::size_t> widths;
    for (const auto &c : w.spatial) widths.push_back(c.in_channels());
    auto parts = split_channels(input, std::span<const std::size_t>(widths));
    for (std::size_t i = 0; i < parts.size(); ++i) {
      branches.push_back(conv2d_fast(parts[i], w.spatial[i], spec.stride, padding_for_kernel(w.spatial[i].k())));
    }
  } else {
    for (const auto &c : w.spatial) {
      branches.push_back(conv2d_fast(input, c, spec.stride, padding_for_kernel(c.k())));
    }
  }
  if (cache) {
    cache->branch_shapes.clear();
    for (const auto &b : branches) cache->branch_shapes.push_back(b.shape());
  }
  Tensor4<T> mid = branches.size() == 1 ? std::move(branches.front()) : concat_channels(branches);
  Tensor4<T> normed = batch_norm2d(mid, *w.mid_bn, mode, cache ? &cache->mid_bn : nullptr);
  Tensor4<T> pw_in = spec.inner_relu ? relu(normed) : normed;
  Tensor4<T> y = conv2d_fast(pw_in, *w.pointwise, 1, 0);
  if (cache) {
    cache->mid_bn_out = std::move(normed);
    cache->pointwise_in = std::move(pw_in);
  }
  return batch_norm2d(y, w.out_bn, mode, cache ? &cache->out_bn : nullptr);
}

template <typename T>
Tensor4<T> dsconv_forward(const Tensor4<T> &input, VariantWeights<T> &w, const ConvVariantSpec &spec,
                          Mode mode = Mode::eval, VariantCache<T> *cache = nullptr) {
  if (spec.variant != Variant::dsconv) throw ConfigError("dsconv_forward called with a non-dsconv variant");
  return variant_forward(input, w, spec, mode, cache);
}

template <typename T>
Tensor4<T> mixconv_forward(const Tensor4<T> &input, VariantWeights<T> &w, const ConvVariantSpec &spec,
                           Mode mode = Mode::eval, VariantCache<T> *cache = nullptr) {
  if (spec.variant != Variant::mixconv) throw ConfigError("mixconv_forward called with a non-mixconv variant");
  return variant_forward(input, w, spec, mode, cache);
}

template <typename T>
Tensor4<T> multiception_forward(const Tensor4<T> &input, VariantWeights<T> &w, const ConvVariantSpec &spec,
                                Mode mode = Mode::eval, VariantCache<T> *cache = nullptr) {
  if (spec.variant != Variant::multiception) {
    throw ConfigError("multiception_forward called with a non-multiception variant");
  }
  return variant_forward(input, w, spec, mode, cache);
}

/// Gradients of a block: grad_input plus a weights-shaped gradient holder.
template <typename T> struct VariantBackward {
  Tensor4<T> grad_input;
  VariantWeights<T> grads;
};

template <typename T> void store_conv_grads(ConvWeights<T> &dst, ConvGrads<T> &&g) {
  dst.kernel = std::move(g.grad_kernel);
  if (dst.bias) *dst.bias = std::move(g.grad_bias);
}

template <typename T> void store_bn_grads(BatchNormParams<T> &dst, BatchNormGrads<T> &g) {
  dst.gamma = std::move(g.grad_gamma);
  dst.beta = std::move(g.grad_beta);
}

template <typename T>
VariantBackward<T> variant_backward(const VariantWeights<T> &w, const ConvVariantSpec &spec,
                                    const VariantCache<T> &cache, const Tensor4<T> &grad_output) {
  // grads mirror w (including its branch order); every learnable entry is overwritten below
  VariantBackward<T> out{Tensor4<T>(cache.input.shape()), w};
  auto bn_out = batch_norm2d_backward(w.out_bn, cache.out_bn, grad_output);
  store_bn_grads(out.grads.out_bn, bn_out);

  if (spec.variant == Variant::standard) {
    const auto &c = w.spatial[0];
    auto g = conv2d_backward(cache.input, c, bn_out.grad_input, spec.stride, padding_for_kernel(c.k()));
    out.grad_input = std::move(g.grad_input);
    store_conv_grads(out.grads.spatial[0], std::move(g));
    return out;
  }

  auto pw = conv2d_backward(cache.pointwise_in, *w.pointwise, bn_out.grad_input, 1, 0);
  Tensor4<T> d_normed = spec.inner_relu ? relu_backward(cache.mid_bn_out, pw.grad_input) : std::move(pw.grad_input);
  store_conv_grads(*out.grads.pointwise, std::move(pw));
  auto bn_mid = batch_norm2d_backward(*w.mid_bn, cache.mid_bn, d_normed);
  store_bn_grads(*out.grads.mid_bn, bn_mid);

  std::vector<std::size_t> widths;
  for (const auto &s : cache.branch_shapes) widths.push_back(s.c);
  auto branch_grads = split_channels(bn_mid.grad_input, std::span<const std::size_t>(widths));

  if (spec.variant == Variant::mixconv) {
    std::vector<std::size_t> in_widths;
    for (const auto &c : w.spatial) in_widths.push_back(c.in_channels());
    auto parts = split_channels(cache.input, std::span<const std::size_t>(in_widths));
    std::vector<Tensor4<T>> grad_parts;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      auto g = conv2d_backward(parts[i], w.spatial[i], branch_grads[i], spec.stride, padding_for_kernel(w.spatial[i].k()));
      grad_parts.push_back(std::move(g.grad_input));
      store_conv_grads(out.grads.spatial[i], std::move(g));
    }
    out.grad_input = concat_channels(grad_parts);
  } else {
    out.grad_input.fill(T(0));
    for (std::size_t i = 0; i < w.spatial.size(); ++i) {
      auto g = conv2d_backward(cache.input, w.spatial[i], branch_grads[i], spec.stride,
                               padding_for_kernel(w.spatial[i].k()));
      add_inplace(out.grad_input, g.grad_input);
      store_conv_grads(out.grads.spatial[i], std::move(g));
    }
  }
  return out;
}

} // namespace multiception
