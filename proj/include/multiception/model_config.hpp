// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/errors.hpp"
#include "multiception/variants.hpp"

#include <charconv>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace multiception {

enum class LayerKind { conv_block, residual_basic, residual_bottleneck, pool, fc };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
  case LayerKind::conv_block: return "conv_block";
  case LayerKind::residual_basic: return "residual_basic";
  case LayerKind::residual_bottleneck: return "residual_bottleneck";
  case LayerKind::pool: return "pool";
  case LayerKind::fc: return "fc";
  }
  return "?";
}

/// Which replaceable convs of a layer take the configured variant.
enum class SubstitutePolicy {
  all,   // every spatial conv
  first, // only the first spatial conv of each layer; the rest stay standard
};

/// Span over which kernel_arrangement thirds are measured.
enum class ArrangementScope {
  network, // all replaceable convs of the model
  stage,   // replaceable convs of one [stage] section
};

struct StageConfig {
  LayerKind block = LayerKind::conv_block;
  std::size_t repeat = 1;
  std::size_t width = 0;
  std::size_t stride = 1;
};

struct ModelConfig {
  std::string name;
  std::size_t input_channels = 0;
  std::size_t input_size = 32;
  std::size_t classes = 0;
  Variant conv_mode = Variant::standard;
  SubstitutePolicy substitute = SubstitutePolicy::all;
  ArrangementScope arrangement = ArrangementScope::network;
  std::vector<StageConfig> stages;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t parse_count(std::string_view value, std::size_t line, const std::string &field, std::size_t lo,
                               std::size_t hi) {
  std::size_t v = 0;
  const auto *end = value.data() + value.size();
  auto [p, ec] = std::from_chars(value.data(), end, v);
  if (ec == std::errc::result_out_of_range) throw SemanticError(field, "value out of range");
  if (ec != std::errc() || p != end) throw SyntaxError(line, "expected an integer for '" + field + "'");
  if (v < lo || v > hi) {
    throw SemanticError(field, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " +
                                   std::to_string(v));
  }
  return v;
}

inline LayerKind parse_block(std::string_view v, std::size_t line) {
  if (v == "conv_block") return LayerKind::conv_block;
  if (v == "residual_basic") return LayerKind::residual_basic;
  if (v == "residual_bottleneck") return LayerKind::residual_bottleneck;
  if (v == "pool") return LayerKind::pool;
  throw SyntaxError(line, "unknown block kind '" + std::string(v) + "'");
}

} // namespace detail

/**
 * Parses the line-oriented model description:
 *
 *   # comment
 *   name = resnet20
 *   input_channels = 3
 *   classes = 10
 *   conv_mode = multiception        # standard | dsconv | mixconv | multiception
 *   substitute = first              # all (default) | first
 *   arrangement = stage             # network (default) | stage
 *   input_size = 32                 # optional, default 32
 *
 *   [stage]
 *   block = residual_basic          # conv_block | residual_basic | residual_bottleneck | pool
 *   repeat = 3
 *   width = 16
 *   stride = 1
 *
 * Unknown keys and malformed lines raise SyntaxError (with line number);
 * out-of-range values raise SemanticError naming the field.
 */
inline ModelConfig parse_model_config(std::string_view text) {
  constexpr std::size_t kMaxWidth = 1 << 16;
  ModelConfig cfg;
  bool has_name = false, has_inputs = false, has_classes = false, any_content = false;
  struct PendingStage {
    StageConfig stage;
    bool has_block = false, has_width = false;
    std::size_t line = 0;
  };
  std::vector<PendingStage> stages;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    any_content = true;

    if (line.front() == '[') {
      if (line != "[stage]") throw SyntaxError(line_no, "unknown section '" + std::string(line) + "'");
      stages.push_back({});
      stages.back().line = line_no;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw SyntaxError(line_no, "expected 'key = value'");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw SyntaxError(line_no, "expected 'key = value'");

    if (stages.empty()) {
      if (key == "name") {
        cfg.name = std::string(value);
        has_name = true;
      } else if (key == "input_channels") {
        cfg.input_channels = detail::parse_count(value, line_no, key, 1, kMaxWidth);
        has_inputs = true;
      } else if (key == "classes") {
        cfg.classes = detail::parse_count(value, line_no, key, 1, 100000);
        has_classes = true;
      } else if (key == "input_size") {
        cfg.input_size = detail::parse_count(value, line_no, key, 1, 4096);
      } else if (key == "conv_mode") {
        try {
          cfg.conv_mode = parse_variant(value);
        } catch (const ConfigError &) {
          throw SemanticError(key, "unknown mode '" + std::string(value) + "'");
        }
      } else if (key == "substitute") {
        if (value == "all") cfg.substitute = SubstitutePolicy::all;
        else if (value == "first") cfg.substitute = SubstitutePolicy::first;
        else throw SemanticError(key, "expected 'all' or 'first'");
      } else if (key == "arrangement") {
        if (value == "network") cfg.arrangement = ArrangementScope::network;
        else if (value == "stage") cfg.arrangement = ArrangementScope::stage;
        else throw SemanticError(key, "expected 'network' or 'stage'");
      } else {
        throw SyntaxError(line_no, "unknown key '" + key + "'");
      }
    } else {
      auto &st = stages.back();
      if (key == "block") {
        st.stage.block = detail::parse_block(value, line_no);
        st.has_block = true;
      } else if (key == "repeat") {
        st.stage.repeat = detail::parse_count(value, line_no, key, 1, 1000);
      } else if (key == "width") {
        st.stage.width = detail::parse_count(value, line_no, key, 1, kMaxWidth);
        st.has_width = true;
      } else if (key == "stride") {
        st.stage.stride = detail::parse_count(value, line_no, key, 1, 2);
      } else {
        throw SyntaxError(line_no, "unknown stage key '" + key + "'");
      }
    }
  }

  if (!any_content) throw SyntaxError(1, "empty model config");
  if (!has_name) throw SemanticError("name", "missing");
  if (!has_inputs) throw SemanticError("input_channels", "missing");
  if (!has_classes) throw SemanticError("classes", "missing");
  if (stages.empty()) throw SemanticError("stage", "at least one [stage] section is required");
  for (const auto &st : stages) {
    if (!st.has_block) throw SyntaxError(st.line, "stage is missing 'block'");
    if (st.stage.block == LayerKind::pool) {
      if (st.stage.stride != 2) throw SemanticError("stride", "pool stages need stride = 2");
    } else if (!st.has_width) {
      throw SemanticError("width", "stage at line " + std::to_string(st.line) + " is missing 'width'");
    }
    cfg.stages.push_back(st.stage);
  }
  return cfg;
}

inline ModelConfig load_model_config(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model_config(ss.str());
}

} // namespace multiception
