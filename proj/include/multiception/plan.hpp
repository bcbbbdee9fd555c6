// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/errors.hpp"
#include "multiception/model_config.hpp"
#include "multiception/variants.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace multiception {

/**
 * Kernel sizes for the replaceable conv at `index` of `total`:
 * the first ceil(total/3) get {3,5,7}, the last floor(total/3) get {3},
 * and the middle (which absorbs the remainder) gets {3,5}.
 */
inline KernelSet kernel_arrangement(std::size_t index, std::size_t total) {
  if (index >= total) {
    throw RangeError("arrangement index " + std::to_string(index) + " out of range for " + std::to_string(total) +
                     " layers");
  }
  const std::size_t first = (total + 2) / 3;
  const std::size_t last = total / 3;
  if (index < first) return {3, 5, 7};
  if (index >= total - last) return {3};
  return {3, 5};
}

/// One conv inside a plan layer.
struct ConvSlot {
  ConvVariantSpec spec;
  // Set for spatial (k > 1) convs, which are the only ones a variant may
  // replace; native 1x1 convs carry nullopt.
  std::optional<std::size_t> arrangement_index;
  std::size_t stage_position = 0; // ordinal among replaceable convs of the stage
  bool substitutable = false;     // replaceable and selected by the substitute policy

  bool replaceable() const { return arrangement_index.has_value(); }
};

struct LayerSpec {
  LayerKind kind = LayerKind::conv_block;
  std::size_t in_c = 0;
  std::size_t out_c = 0;
  std::size_t stride = 1;
  std::size_t stage = 0;
  std::vector<ConvSlot> convs;            // main path, in execution order
  std::optional<ConvVariantSpec> shortcut; // projection (1x1 conv + BN) when shapes change
};

struct LayerPlan {
  std::string name;
  std::size_t input_channels = 0;
  std::size_t input_size = 32;
  std::size_t classes = 0;
  Variant mode = Variant::standard;
  SubstitutePolicy substitute = SubstitutePolicy::all;
  ArrangementScope arrangement = ArrangementScope::network;
  std::vector<LayerSpec> layers;
  std::size_t total_replaceable = 0;
  std::vector<std::size_t> stage_replaceable; // replaceable count per stage

  /// Every conv slot in network order.
  template <typename F> void for_each_slot(F &&f) const {
    for (const auto &l : layers)
      for (const auto &s : l.convs) f(l, s);
  }
};

namespace detail {

inline ConvSlot native_conv(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride) {
  ConvSlot s;
  s.spec = ConvVariantSpec{Variant::standard, in_c, out_c, KernelSet{k}, stride};
  return s;
}

/// Resolves a replaceable slot's variant spec under the plan's mode and policies.
inline ConvVariantSpec assign_variant(const LayerPlan &plan, const LayerSpec &layer, const ConvSlot &slot) {
  ConvVariantSpec spec = slot.spec;
  spec.variant = Variant::standard;
  spec.kernels = KernelSet{3};
  if (!slot.substitutable) return spec;
  spec.variant = plan.mode;
  if (plan.mode == Variant::mixconv || plan.mode == Variant::multiception) {
    spec.kernels = plan.arrangement == ArrangementScope::network
                       ? kernel_arrangement(*slot.arrangement_index, plan.total_replaceable)
                       : kernel_arrangement(slot.stage_position, plan.stage_replaceable.at(layer.stage));
  }
  spec.validate();
  return spec;
}

} // namespace detail

/**
 * Re-derives every substitutable conv for `mode`: kernel sets follow
 * kernel_arrangement for mixconv/multiception and are {3} for
 * standard/dsconv. Native 1x1 convs, shortcuts and the head are untouched.
 */
inline LayerPlan substitute_convs(LayerPlan plan, Variant mode) {
  plan.mode = mode;
  for (auto &layer : plan.layers) {
    for (auto &slot : layer.convs) {
      if (slot.replaceable()) slot.spec = detail::assign_variant(plan, layer, slot);
    }
  }
  return plan;
}

/// Forces every substituted mixconv/multiception slot to use `kernels`.
inline LayerPlan restrict_kernels(LayerPlan plan, const KernelSet &kernels) {
  for (auto &layer : plan.layers) {
    for (auto &slot : layer.convs) {
      if (slot.spec.variant == Variant::mixconv || slot.spec.variant == Variant::multiception) {
        slot.spec.kernels = kernels;
        slot.spec.validate();
      }
    }
  }
  return plan;
}

/**
 * Expands a config into its layer sequence. Each [stage] contributes
 * `repeat` layers; the first uses the stage stride. A global-average-pool +
 * fully connected head is appended.
 *
 * Replaceable convs are the spatial (3x3) ones, stem included, numbered in
 * network order. Bottleneck 1x1 convs and projection shortcuts are never
 * replaceable.
 */
inline LayerPlan build_plan(const ModelConfig &cfg) {
  if (cfg.stages.empty()) throw ConfigError("model '" + cfg.name + "' has no stages");
  LayerPlan plan;
  plan.name = cfg.name;
  plan.input_channels = cfg.input_channels;
  plan.input_size = cfg.input_size;
  plan.classes = cfg.classes;
  plan.mode = cfg.conv_mode;
  plan.substitute = cfg.substitute;
  plan.arrangement = cfg.arrangement;

  std::size_t channels = cfg.input_channels;
  std::size_t replaceable = 0;
  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const StageConfig &st = cfg.stages[si];
    std::size_t in_stage = 0;
    auto spatial = [&](std::size_t in_c, std::size_t out_c, std::size_t stride, bool first_in_layer) {
      ConvSlot s = detail::native_conv(in_c, out_c, 3, stride);
      s.arrangement_index = replaceable++;
      s.stage_position = in_stage++;
      s.substitutable = plan.substitute == SubstitutePolicy::all || first_in_layer;
      return s;
    };
    for (std::size_t r = 0; r < st.repeat; ++r) {
      LayerSpec layer;
      layer.kind = st.block;
      layer.stage = si;
      layer.stride = r == 0 ? st.stride : 1;
      layer.in_c = channels;
      switch (st.block) {
      case LayerKind::conv_block:
        layer.out_c = st.width;
        layer.convs.push_back(spatial(channels, st.width, layer.stride, true));
        break;
      case LayerKind::residual_basic:
        layer.out_c = st.width;
        layer.convs.push_back(spatial(channels, st.width, layer.stride, true));
        layer.convs.push_back(spatial(st.width, st.width, 1, false));
        break;
      case LayerKind::residual_bottleneck:
        layer.out_c = 4 * st.width;
        layer.convs.push_back(detail::native_conv(channels, st.width, 1, 1));
        layer.convs.push_back(spatial(st.width, st.width, layer.stride, true));
        layer.convs.push_back(detail::native_conv(st.width, layer.out_c, 1, 1));
        break;
      case LayerKind::pool:
        layer.out_c = channels;
        layer.stride = 2;
        break;
      case LayerKind::fc:
        throw ConfigError("fc layers are appended automatically");
      }
      if ((st.block == LayerKind::residual_basic || st.block == LayerKind::residual_bottleneck) &&
          (layer.in_c != layer.out_c || layer.stride != 1)) {
        layer.shortcut = ConvVariantSpec{Variant::standard, layer.in_c, layer.out_c, KernelSet{1}, layer.stride};
      }
      channels = layer.out_c;
      plan.layers.push_back(std::move(layer));
    }
    plan.stage_replaceable.push_back(in_stage);
  }
  plan.total_replaceable = replaceable;

  LayerSpec fc;
  fc.kind = LayerKind::fc;
  fc.in_c = channels;
  fc.out_c = cfg.classes;
  fc.stage = cfg.stages.size() - 1;
  plan.layers.push_back(std::move(fc));

  // channel chain check
  std::size_t c = cfg.input_channels;
  for (const auto &l : plan.layers) {
    if (l.in_c != c) throw ConfigError("inconsistent channel chain at " + std::string(to_string(l.kind)));
    std::size_t inner = l.in_c;
    for (const auto &s : l.convs) {
      if (s.spec.in_c != inner) throw ConfigError("inconsistent channel chain inside " + std::string(to_string(l.kind)));
      inner = s.spec.out_c;
    }
    if (!l.convs.empty() && inner != l.out_c) throw ConfigError("block output width mismatch");
    c = l.out_c;
  }
  return substitute_convs(std::move(plan), cfg.conv_mode);
}

/// Spatial extent after every layer, starting from `input_hw`.
inline std::vector<std::size_t> layer_output_extents(const LayerPlan &plan, std::size_t input_hw) {
  std::vector<std::size_t> out;
  std::size_t hw = input_hw;
  for (const auto &l : plan.layers) {
    if (l.kind == LayerKind::pool) {
      if (hw % 2 != 0) throw DimensionError("pool stage needs an even extent, got " + std::to_string(hw));
      hw /= 2;
    } else if (l.kind == LayerKind::fc) {
      hw = 1;
    } else {
      hw = (hw - 1) / l.stride + 1;
    }
    out.push_back(hw);
  }
  return out;
}

} // namespace multiception
