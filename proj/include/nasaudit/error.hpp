#pragma once

#include <stdexcept>
#include <string>

namespace nasaudit {

// Shape/dimension mismatch in a numeric primitive.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid user-supplied configuration (fractions, sizes, widths, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A call violated an API precondition (e.g. non-scalar loss).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file (IDX, CSV, checkpoint, manifest).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite gradient reached an optimizer step.
struct NanGradientError : std::runtime_error {
  explicit NanGradientError(const std::string& what) : std::runtime_error(what) {}
};

// Clean-data guard tripped: poisoned rows reached a clean-only stage.
struct MethodologyError : std::runtime_error {
  explicit MethodologyError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nasaudit
