// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/accounting.hpp"
#include "multiception/model.hpp"
#include "multiception/plan.hpp"
#include "multiception/random.hpp"
#include "multiception/variants.hpp"

#include <array>
#include <cstring>
#include <string>
#include <vector>

namespace multiception {

struct CheckResult {
  std::string name;
  bool passed = true;
  std::size_t trials = 0;
  std::string detail; // first failure, or a short summary
};

namespace detail {

inline const std::array<std::size_t, 4> kKernelChoices{1, 3, 5, 7};

inline KernelSet random_kernel_set(Rng &rng, std::size_t max_size) {
  std::vector<std::size_t> ks;
  while (ks.empty()) {
    for (auto k : kKernelChoices)
      if (rng.coin()) ks.push_back(k);
    if (ks.size() > max_size) ks.clear();
  }
  return KernelSet(ks);
}

inline KernelSet random_triple(Rng &rng) {
  std::vector<std::size_t> ks(kKernelChoices.begin(), kKernelChoices.end());
  ks.erase(ks.begin() + static_cast<std::ptrdiff_t>(rng.below(4)));
  return KernelSet(ks);
}

inline count_t closed_form_params(const ConvVariantSpec &s) {
  const count_t C = s.in_c, N = s.out_c;
  switch (s.variant) {
  case Variant::standard: return params_standard(C, s.kernels[0], N) + 2 * N;
  case Variant::dsconv: return params_dsconv(C, s.kernels[0], N) + 2 * C + 2 * N;
  case Variant::mixconv: return params_mixconv_exact(C, s.kernels, N, true);
  case Variant::multiception: return params_multiception_exact(C, s.kernels, N, true);
  }
  return 0;
}

template <typename T> bool bitwise_equal(const Tensor4<T> &a, const Tensor4<T> &b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

} // namespace detail

/**
 * For random block specs, the closed-form parameter count, the per-part
 * formula cost and the enumerated scalars of allocated weights must agree;
 * random small models must pass model_cost's own reconciliation.
 */
inline CheckResult check_reconciliation(std::uint64_t seed, std::size_t trials = 200) {
  CheckResult r{"formula/enumeration reconciliation", true, trials, ""};
  Rng rng(seed);
  for (std::size_t t = 0; t < trials && r.passed; ++t) {
    ConvVariantSpec s;
    s.variant = kAllVariants[rng.below(4)];
    s.in_c = 1 + rng.below(48);
    s.out_c = 1 + rng.below(48);
    s.stride = 1 + rng.below(2);
    const bool single = s.variant == Variant::standard || s.variant == Variant::dsconv;
    s.kernels = single ? KernelSet{detail::kKernelChoices[rng.below(4)]}
                       : detail::random_kernel_set(rng, s.variant == Variant::mixconv ? std::min<std::size_t>(4, s.in_c) : 4);
    const count_t closed = detail::closed_form_params(s);
    const count_t formula = variant_cost(s, 8).params;
    const count_t enumerated = variant_zero<float>(s).param_count();
    if (closed != formula || formula != enumerated) {
      r.passed = false;
      r.detail = std::string(to_string(s.variant)) + " C=" + std::to_string(s.in_c) + " N=" + std::to_string(s.out_c) +
                 " K=" + s.kernels.str() + ": closed " + std::to_string(closed) + ", formula " +
                 std::to_string(formula) + ", enumerated " + std::to_string(enumerated);
    }
  }
  for (std::size_t t = 0; t < 20 && r.passed; ++t) {
    ModelConfig cfg;
    cfg.name = "random";
    cfg.input_channels = 3 + rng.below(2);
    cfg.classes = 2 + rng.below(9);
    cfg.conv_mode = kAllVariants[rng.below(4)];
    cfg.substitute = rng.coin() ? SubstitutePolicy::all : SubstitutePolicy::first;
    cfg.arrangement = rng.coin() ? ArrangementScope::network : ArrangementScope::stage;
    const std::array<LayerKind, 3> kinds{LayerKind::conv_block, LayerKind::residual_basic,
                                         LayerKind::residual_bottleneck};
    for (std::size_t i = 0, m = 1 + rng.below(4); i < m; ++i) {
      cfg.stages.push_back({kinds[rng.below(3)], 1 + rng.below(3), 4 + rng.below(12), 1 + rng.below(2)});
    }
    try {
      (void)model_cost(build_plan(cfg), 16);
    } catch (const ConsistencyError &e) {
      r.passed = false;
      r.detail = e.what();
    }
  }
  if (r.passed) r.detail = std::to_string(trials) + " blocks and 20 models agree";
  return r;
}

/// Multiception with kernels {3} against DSConv with k = 3, bitwise, both BN modes.
inline CheckResult check_degeneracy(std::uint64_t seed, std::size_t trials = 100) {
  CheckResult r{"singleton multiception == dsconv (bitwise)", true, trials, ""};
  Rng rng(seed);
  for (std::size_t t = 0; t < trials && r.passed; ++t) {
    ConvVariantSpec ds{Variant::dsconv, 1 + rng.below(8), 1 + rng.below(8), KernelSet{3}, 1 + rng.below(2)};
    ConvVariantSpec mc = ds;
    mc.variant = Variant::multiception;
    auto wd = variant_init<float>(ds, rng.bits());
    auto wm = wd;
    Tensor4<float> x(Shape4{1 + rng.below(3), ds.in_c, 2 + rng.below(10), 2 + rng.below(10)});
    for (auto &v : x.span()) v = static_cast<float>(rng.normal());
    const Mode mode = t % 2 ? Mode::train : Mode::eval;
    const auto yd = dsconv_forward(x, wd, ds, mode);
    const auto ym = multiception_forward(x, wm, mc, mode);
    if (!detail::bitwise_equal(yd, ym)) {
      r.passed = false;
      r.detail = "outputs differ at trial " + std::to_string(t);
    } else if (!detail::bitwise_equal(Tensor4<float>(Shape4{1, 1, 1, wd.out_bn.channels()}, wd.out_bn.running_var),
                                      Tensor4<float>(Shape4{1, 1, 1, wm.out_bn.channels()}, wm.out_bn.running_var))) {
      r.passed = false;
      r.detail = "running statistics differ at trial " + std::to_string(t);
    }
  }
  if (r.passed) r.detail = std::to_string(trials) + " random blocks identical";
  return r;
}

/// alpha * standard == dsconv for parameters and computations, in exact rational arithmetic.
inline CheckResult check_ratio_identity(std::uint64_t seed, std::size_t trials = 1000) {
  CheckResult r{"reduction ratio identity", true, trials, ""};
  Rng rng(seed);
  for (std::size_t t = 0; t < trials && r.passed; ++t) {
    const count_t C = 1 + rng.below(1024), K = detail::kKernelChoices[rng.below(4)], N = 1 + rng.below(1024);
    const count_t H = 1 + rng.below(128), W = 1 + rng.below(128);
    const Rational a = ratio_alpha_exact(K, N);
    // a.num / a.den * standard == dsconv  <=>  a.num * standard == a.den * dsconv
    const count_t lp = a.num * params_standard(C, K, N);
    const count_t rp = a.den * params_dsconv(C, K, N);
    const count_t lf = a.num * flops_standard(H, W, C, K, N);
    const count_t rf = a.den * flops_dsconv(H, W, C, K, N);
    if (lp != rp || lf != rf) {
      r.passed = false;
      r.detail = "C=" + std::to_string(C) + " K=" + std::to_string(K) + " N=" + std::to_string(N);
    }
  }
  if (r.passed) r.detail = std::to_string(trials) + " random (C,K,N,H,W) exact";
  return r;
}

/// The three-kernel upper bound strictly exceeds the exact bias- and BN-free count.
inline CheckResult check_multiception_bound(std::uint64_t seed, std::size_t trials = 1000) {
  CheckResult r{"three-kernel parameter bound", true, trials, ""};
  Rng rng(seed);
  for (std::size_t t = 0; t < trials && r.passed; ++t) {
    const count_t C = 1 + rng.below(1024), N = 1 + rng.below(1024);
    const KernelSet ks = detail::random_triple(rng);
    const count_t bound = params_multiception_bound(C, ks, N);
    const count_t exact = params_multiception_exact(C, ks, N, false);
    if (!(bound > exact)) {
      r.passed = false;
      r.detail = "C=" + std::to_string(C) + " N=" + std::to_string(N) + " K=" + ks.str() + ": bound " +
                 std::to_string(bound) + " <= exact " + std::to_string(exact);
    }
  }
  if (r.passed) r.detail = std::to_string(trials) + " random triples bounded";
  return r;
}

/// For every depth 1..200: thirds have sizes ceil, remainder, floor and cover each index once.
inline CheckResult check_arrangement_partition(std::size_t max_total = 200) {
  CheckResult r{"kernel arrangement partition", true, max_total, ""};
  for (std::size_t total = 1; total <= max_total && r.passed; ++total) {
    std::size_t first = 0, middle = 0, last = 0, prev = 4;
    for (std::size_t i = 0; i < total; ++i) {
      const KernelSet ks = kernel_arrangement(i, total);
      if (ks.size() > prev) {
        r.passed = false;
        r.detail = "kernel count increases at " + std::to_string(i) + " of " + std::to_string(total);
      }
      prev = ks.size();
      if (ks == KernelSet{3, 5, 7}) ++first;
      else if (ks == KernelSet{3, 5}) ++middle;
      else if (ks == KernelSet{3}) ++last;
      else r.passed = false;
    }
    if (first != (total + 2) / 3 || last != total / 3 || first + middle + last != total) {
      r.passed = false;
      r.detail = "bad thirds for " + std::to_string(total) + " layers";
    }
  }
  if (r.passed) r.detail = "depths 1.." + std::to_string(max_total) + " partitioned";
  return r;
}

/**
 * Three standard conv layers c -> n -> 2n -> 4n with kernel k hold
 * (10n + c) * k^2 * n conv weights; each Multiception layer (kernels per
 * the arrangement) stays within the three-kernel bound.
 */
inline CheckResult check_worked_example(std::uint64_t seed, std::size_t trials = 50) {
  CheckResult r{"three-layer worked example", true, trials, ""};
  Rng rng(seed);
  for (std::size_t t = 0; t < trials && r.passed; ++t) {
    const std::size_t c = 1 + rng.below(8), n = 4 + rng.below(60);
    ModelConfig cfg;
    cfg.name = "three_layer";
    cfg.input_channels = c;
    cfg.classes = 10;
    cfg.stages = {{LayerKind::conv_block, 1, n, 1}, {LayerKind::conv_block, 1, 2 * n, 1}, {LayerKind::conv_block, 1, 4 * n, 1}};
    const auto plan = build_plan(cfg);
    const auto report = model_cost(plan, 8);
    count_t conv = 0;
    for (const auto &l : report.per_layer) {
      if (auto it = l.breakdown.find("conv-3"); it != l.breakdown.end()) conv += it->second.params;
    }
    const count_t k = 3;
    if (conv != (10 * n + c) * k * k * n) {
      r.passed = false;
      r.detail = "standard conv weights " + std::to_string(conv) + " != (10n+c)k^2n for c=" + std::to_string(c) +
                 " n=" + std::to_string(n);
      break;
    }
    const auto mc = substitute_convs(plan, Variant::multiception);
    for (const auto &l : mc.layers) {
      for (const auto &s : l.convs) {
        const auto &sp = s.spec;
        const count_t bound = 3 * sp.in_c * (sp.kernels.sum_of_squares() + sp.out_c);
        if (params_multiception_exact(sp.in_c, sp.kernels, sp.out_c, false) > bound) {
          r.passed = false;
          r.detail = "layer with " + sp.kernels.str() + " exceeds the bound";
        }
      }
    }
  }
  if (r.passed) r.detail = std::to_string(trials) + " random (c, n) match";
  return r;
}

inline std::vector<CheckResult> run_verify(std::uint64_t seed = 20240901) {
  return {check_reconciliation(seed),          check_degeneracy(seed + 1),  check_ratio_identity(seed + 2),
          check_multiception_bound(seed + 3),  check_arrangement_partition(), check_worked_example(seed + 4)};
}

} // namespace multiception
