#pragma once

#include <stdexcept>
#include <string>

namespace xdistill {

// Base of every error the library throws. kind() is a stable, machine-readable
// tag used by the CLI when reporting failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message);
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message) : Error("invalid-argument", message) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& message) : Error("divergence", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

enum class FormatErrc {
  Io,
  BadMagic,
  VersionMismatch,
  Truncated,
  LengthMismatch,
  Checksum,
  DimensionOverflow,
  CountMismatch,
  BadHeader,
};

const char* to_string(FormatErrc code) noexcept;

// Raised by the model and IDX readers; each corruption class has its own code.
class FormatError : public Error {
 public:
  FormatError(FormatErrc code, const std::string& message);
  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

// Non-fatal diagnostics (degenerate normalization, out-of-range learning rate).
// Written to stderr unless a test silences them.
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);
int warning_count();

}  // namespace xdistill
