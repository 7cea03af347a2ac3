#pragma once

#include <stdexcept>
#include <string>

namespace solodiff {

/// Base of every error raised by the library. `kind()` is a stable
/// machine-readable tag used in structured CLI error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Invalid argument to an operation (bad shape, out-of-range step, ...).
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& message) : Error("parameter", message) {}
};

/// Bad or inconsistent input data on disk.
class InputError : public Error {
 public:
  explicit InputError(const std::string& message) : Error("input", message) {}
};

/// Serialized data that cannot be encoded or decoded.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

/// Training diverged (non-finite loss) or could not proceed.
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& message) : Error("training", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace solodiff
