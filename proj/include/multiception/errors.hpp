// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace multiception {

/// Base class for every error raised by the library. `kind()` is a short
/// stable tag used by the CLI for its machine-parseable error prefix.
class Error : public std::runtime_error {
public:
  Error(const char *kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}
  const char *kind() const noexcept { return kind_; }

private:
  const char *kind_;
};

/// Tensor shapes that do not line up.
class DimensionError : public Error {
public:
  explicit DimensionError(const std::string &what) : Error("dimension", what) {}
};

/// Invalid layer, variant, or model configuration.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string &what) : Error("config", what) {}
};

class RangeError : public Error {
public:
  explicit RangeError(const std::string &what) : Error("range", what) {}
};

/// Malformed external data (dataset files).
class FormatError : public Error {
public:
  explicit FormatError(const std::string &what) : Error("format", what) {}
};

/// Invalid caller-supplied values such as out-of-range labels.
class InputError : public Error {
public:
  explicit InputError(const std::string &what) : Error("input", what) {}
};

/// Model config text that fails to parse. Carries the 1-based line number.
class SyntaxError : public Error {
public:
  SyntaxError(std::size_t line, const std::string &what)
      : Error("syntax", "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Model config text that parses but names an invalid value. Carries the field.
class SemanticError : public Error {
public:
  SemanticError(std::string field, const std::string &what)
      : Error("semantic", field + ": " + what), field_(std::move(field)) {}
  const std::string &field() const noexcept { return field_; }

private:
  std::string field_;
};

/// Two independent computations of the same quantity disagree.
class ConsistencyError : public Error {
public:
  explicit ConsistencyError(const std::string &what) : Error("consistency", what) {}
};

} // namespace multiception
