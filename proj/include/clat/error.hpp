#pragma once

#include <stdexcept>
#include <string>

namespace clat {

/// Base class for all library errors. The category tag is what the CLI
/// prints in its `error[<category>]: ...` diagnostics.
class Error : public std::runtime_error {
public:
  Error(std::string category, const std::string& msg)
      : std::runtime_error(msg), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

private:
  std::string category_;
};

/// Tensor shapes that do not compose (matmul inner dims, elementwise ops).
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

/// Structurally invalid configuration: non-integral conv output size,
/// bad attack parameters, malformed config files.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

/// API misuse: invalid tap index, empty critical set, gradient request
/// for a tensor that is not on the tape.
class UsageError : public Error {
public:
  explicit UsageError(const std::string& msg) : Error("usage", msg) {}
};

/// Invalid runtime input values, e.g. a class label out of range.
class InputError : public Error {
public:
  explicit InputError(const std::string& msg) : Error("input", msg) {}
};

/// Unparseable file contents (bad magic, bad record size).
class FormatError : public Error {
public:
  explicit FormatError(const std::string& msg) : Error("format", msg) {}
};

/// A file that parses structurally but fails integrity checks.
class CorruptionError : public Error {
public:
  explicit CorruptionError(const std::string& msg) : Error("corruption", msg) {}
};

/// Checkpoint does not match the configured architecture.
class CompatibilityError : public Error {
public:
  explicit CompatibilityError(const std::string& msg) : Error("compatibility", msg) {}
};

/// A layer produced (near-)zero feature weakness, so the criticality
/// ratio is undefined.
class DegenerateFeatureError : public Error {
public:
  explicit DegenerateFeatureError(const std::string& msg) : Error("degenerate-feature", msg) {}
};

}  // namespace clat
