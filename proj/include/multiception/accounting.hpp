// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/errors.hpp"
#include "multiception/model.hpp"
#include "multiception/plan.hpp"
#include "multiception/variants.hpp"

#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace multiception {

using count_t = std::uint64_t;

// Closed-form costs of one layer with C input channels, N output channels,
// kernel size K at an H x W output resolution. Parameters exclude bias and BN.

/// C * K^2 * N
constexpr count_t params_standard(count_t C, count_t K, count_t N) { return C * K * K * N; }

/// H * W * C * K^2 * N multiply-accumulates
constexpr count_t flops_standard(count_t H, count_t W, count_t C, count_t K, count_t N) {
  return H * W * C * K * K * N;
}

/// Depthwise C * K^2 plus pointwise C * N.
constexpr count_t params_dsconv(count_t C, count_t K, count_t N) { return C * (K * K + N); }

constexpr count_t flops_dsconv(count_t H, count_t W, count_t C, count_t K, count_t N) {
  return H * W * C * (K * K + N);
}

/// Exact fraction in lowest terms.
struct Rational {
  count_t num = 0;
  count_t den = 1;

  static Rational make(count_t n, count_t d) {
    if (d == 0) throw RangeError("zero denominator");
    const count_t g = std::gcd(n, d);
    return {n / g, d / g};
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational &) const = default;
};

/// DSConv-to-standard ratio (K^2 + N) / (K^2 * N), in lowest terms.
inline Rational ratio_alpha_exact(count_t K, count_t N) {
  if (K == 0 || N == 0) throw RangeError("ratio_alpha needs K, N >= 1");
  return Rational::make(K * K + N, K * K * N);
}

inline double ratio_alpha(count_t K, count_t N) { return ratio_alpha_exact(K, N).value(); }

/// Learnable scalars of a Multiception block: C * sum(K_j^2) depthwise,
/// C * |kernels| * N pointwise and, with BN, 2 * C * |kernels| + 2 * N.
inline count_t params_multiception_exact(count_t C, const KernelSet &kernels, count_t N, bool with_bn) {
  const count_t branches = kernels.size();
  count_t p = C * kernels.sum_of_squares() + C * branches * N;
  if (with_bn) p += 2 * C * branches + 2 * N;
  return p;
}

/// Per-layer upper bound 3C * (sum(K_j^2) + N) for three kernel sizes.
inline count_t params_multiception_bound(count_t C, const KernelSet &kernels, count_t N) {
  if (kernels.size() != 3) throw ConfigError("the three-kernel bound needs exactly 3 kernel sizes");
  return 3 * C * (kernels.sum_of_squares() + N);
}

/// MixConv: each channel group carries its own kernel size; one pointwise C x N.
inline count_t params_mixconv_exact(count_t C, const KernelSet &kernels, count_t N, bool with_bn) {
  const auto widths = mixconv_partition(C, kernels.size());
  count_t p = C * N;
  for (std::size_t i = 0; i < widths.size(); ++i) p += widths[i] * kernels[i] * kernels[i];
  if (with_bn) p += 2 * C + 2 * N;
  return p;
}

struct PartCost {
  count_t params = 0;
  count_t flops = 0;
  bool operator==(const PartCost &) const = default;
};

struct LayerCost {
  std::string label; // kind of the plan layer
  count_t params = 0;
  count_t flops = 0;
  std::map<std::string, PartCost> breakdown;

  void add(const std::string &part, count_t p, count_t f) {
    auto &pc = breakdown[part];
    pc.params += p;
    pc.flops += f;
    params += p;
    flops += f;
  }
};

/// Formula cost of one variant block (BN included) at output extent out_hw.
inline LayerCost variant_cost(const ConvVariantSpec &spec, count_t out_hw, const std::string &prefix = "") {
  spec.validate();
  LayerCost cost;
  const count_t HW = out_hw * out_hw;
  const count_t C = spec.in_c, N = spec.out_c;
  switch (spec.variant) {
  case Variant::standard: {
    const count_t K = spec.kernels[0];
    cost.add(prefix + "conv-" + std::to_string(K), params_standard(C, K, N), flops_standard(out_hw, out_hw, C, K, N));
    break;
  }
  case Variant::dsconv:
  case Variant::multiception:
    for (auto K : spec.kernels) cost.add("depthwise-" + std::to_string(K), C * K * K, HW * C * K * K);
    cost.add("pointwise", C * spec.kernels.size() * N, HW * C * spec.kernels.size() * N);
    cost.add("bn", 2 * C * spec.kernels.size(), 0);
    break;
  case Variant::mixconv: {
    const auto widths = mixconv_partition(C, spec.kernels.size());
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const count_t K = spec.kernels[i];
      cost.add("depthwise-" + std::to_string(K), widths[i] * K * K, HW * widths[i] * K * K);
    }
    cost.add("pointwise", C * N, HW * C * N);
    cost.add("bn", 2 * C, 0);
    break;
  }
  }
  cost.add("bn", 2 * N, 0);
  return cost;
}

struct ParamReport {
  std::string model;
  Variant mode = Variant::standard;
  std::size_t input_hw = 32;
  std::vector<LayerCost> per_layer;
  count_t total_params = 0;
  count_t total_flops = 0;
  count_t baseline_params = 0; // same plan with every substitutable conv standard
  count_t baseline_flops = 0;
  double reduction_pct = 0.0;  // (total - baseline) / baseline * 100; negative = fewer params
};

namespace detail {

inline void merge_into(LayerCost &dst, const LayerCost &src) {
  for (const auto &[k, v] : src.breakdown) dst.add(k, v.params, v.flops);
}

inline std::vector<LayerCost> formula_costs(const LayerPlan &plan, std::size_t input_hw) {
  const auto extents = layer_output_extents(plan, input_hw);
  std::vector<LayerCost> costs;
  for (std::size_t li = 0; li < plan.layers.size(); ++li) {
    const LayerSpec &l = plan.layers[li];
    LayerCost cost;
    cost.label = std::string(to_string(l.kind));
    const count_t out_hw = extents[li];
    const count_t in_hw = li == 0 ? input_hw : extents[li - 1];
    count_t hw = in_hw;
    for (const auto &s : l.convs) {
      hw = (hw - 1) / s.spec.stride + 1;
      merge_into(cost, variant_cost(s.spec, hw));
    }
    if (l.shortcut) {
      auto sc = variant_cost(*l.shortcut, out_hw);
      cost.add("shortcut", sc.breakdown["conv-1"].params, sc.breakdown["conv-1"].flops);
      cost.add("bn", sc.breakdown["bn"].params, 0);
    }
    if (l.kind == LayerKind::fc) cost.add("fc", l.in_c * l.out_c + l.out_c, l.in_c * l.out_c);
    costs.push_back(std::move(cost));
  }
  return costs;
}

} // namespace detail

/**
 * Parameter and FLOP report for a plan. Every layer is counted twice, from
 * the closed forms and by enumerating the scalars of freshly allocated
 * weights; any disagreement raises ConsistencyError.
 */
inline ParamReport model_cost(const LayerPlan &plan, std::size_t input_hw) {
  ParamReport r;
  r.model = plan.name;
  r.mode = plan.mode;
  r.input_hw = input_hw;
  r.per_layer = detail::formula_costs(plan, input_hw);

  const auto weights = model_zero<float>(plan);
  for (std::size_t li = 0; li < plan.layers.size(); ++li) {
    count_t enumerated = 0;
    const auto &lw = weights.layers[li];
    for (const auto &c : lw.convs) enumerated += c.param_count();
    if (lw.shortcut) enumerated += lw.shortcut->param_count();
    if (plan.layers[li].kind == LayerKind::fc) enumerated += weights.fc.weight.size() + weights.fc.bias.size();
    if (enumerated != r.per_layer[li].params) {
      throw ConsistencyError("layer " + std::to_string(li) + " (" + r.per_layer[li].label + "): formula count " +
                             std::to_string(r.per_layer[li].params) + " != enumerated " + std::to_string(enumerated));
    }
    r.total_params += r.per_layer[li].params;
    r.total_flops += r.per_layer[li].flops;
  }
  if (r.total_params != weights.param_count()) throw ConsistencyError("model total disagrees with enumeration");

  const auto baseline = detail::formula_costs(substitute_convs(plan, Variant::standard), input_hw);
  for (const auto &c : baseline) {
    r.baseline_params += c.params;
    r.baseline_flops += c.flops;
  }
  r.reduction_pct = (static_cast<double>(r.total_params) - static_cast<double>(r.baseline_params)) /
                    static_cast<double>(r.baseline_params) * 100.0;
  return r;
}

/// Tab-separated per-layer table with a trailing total row.
inline std::string to_tsv(const ParamReport &r) {
  std::ostringstream os;
  os << "layer\tkind\tparams\tflops\n";
  for (std::size_t i = 0; i < r.per_layer.size(); ++i) {
    os << i << '\t' << r.per_layer[i].label << '\t' << r.per_layer[i].params << '\t' << r.per_layer[i].flops << '\n';
  }
  os << "total\t" << to_string(r.mode) << '\t' << r.total_params << '\t' << r.total_flops << '\n';
  return os.str();
}

/// `key = value` text with a fixed key order, one [layer] section per layer.
inline std::string to_structured_text(const ParamReport &r) {
  std::ostringstream os;
  os << "model = " << r.model << '\n'
     << "mode = " << to_string(r.mode) << '\n'
     << "input_hw = " << r.input_hw << '\n'
     << "total_params = " << r.total_params << '\n'
     << "total_flops = " << r.total_flops << '\n'
     << "baseline_params = " << r.baseline_params << '\n'
     << "baseline_flops = " << r.baseline_flops << '\n'
     << "reduction_pct = " << std::fixed << std::setprecision(2) << r.reduction_pct << '\n';
  for (std::size_t i = 0; i < r.per_layer.size(); ++i) {
    const auto &c = r.per_layer[i];
    os << "\n[layer]\nindex = " << i << "\nkind = " << c.label << "\nparams = " << c.params << "\nflops = " << c.flops
       << '\n';
    for (const auto &[part, pc] : c.breakdown) os << part << " = " << pc.params << ' ' << pc.flops << '\n';
  }
  return os.str();
}

} // namespace multiception
