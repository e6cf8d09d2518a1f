#pragma once

#include <stdexcept>
#include <string>

namespace sqz {

/// Base for every error raised by the library. Each kind maps onto one of the
/// CLI exit codes: input/validation problems exit with 2, numeric failures with 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  [[nodiscard]] virtual int exit_code() const noexcept { return 1; }
};

/// Bad configuration: invalid geometry, missing coefficient, malformed file.
class ConfigError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

/// Argument outside the range an operation is defined on (e.g. wavelength
/// outside a dispersion model's validity window).
class RangeError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

/// Physically or mathematically invalid input for a formula (at/above
/// threshold, efficiency outside (0,1], ...).
class DomainError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

/// Malformed data supplied by the user (CSV schema violations and the like).
class InputError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

/// Iterative method failed to converge. Carries the last residual.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  [[nodiscard]] double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace sqz
