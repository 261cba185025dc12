#pragma once

#include <stdexcept>
#include <string>

namespace moistsw {

/// Field shapes or formulations do not line up.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration or parameter set (grid too small, bad placement/solver pair, ...).
struct ConfigurationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Base for failures that happen while numbers are being crunched.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateReferenceError : NumericalError {
  using NumericalError::NumericalError;
};

/// D + B <= 0 somewhere, so the saturation function is undefined.
struct SaturationDomainError : NumericalError {
  using NumericalError::NumericalError;
};

struct InitializationError : NumericalError {
  InitializationError(const std::string& what, double worst_residual)
      : NumericalError(what), worst_residual(worst_residual) {}
  double worst_residual;
};

struct NonConvergenceError : NumericalError {
  NonConvergenceError(const std::string& what, int iterations, double residual_norm)
      : NumericalError(what), iterations(iterations), residual_norm(residual_norm) {}
  int iterations;
  double residual_norm;
};

}  // namespace moistsw
