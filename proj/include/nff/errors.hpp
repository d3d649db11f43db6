#pragma once

#include <stdexcept>
#include <string>

namespace nff {

/// Mismatched tensor shapes, dimensions or sizes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/inf produced, singular or ill-conditioned system, divergent training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or missing key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs that do not belong together (hash mismatch, wrong field set).
class DataMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nff
