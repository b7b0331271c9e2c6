#pragma once

#include <stdexcept>
#include <string>

namespace rarewave {

// Argument outside the mathematical domain of a map (negative density, t <= 0, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Solver breakdown: non-convergent root finder, negative density, NaN.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller violated a documented precondition.
struct PreconditionError : std::logic_error {
  using std::logic_error::logic_error;
};

// Bad user configuration; carries the offending line when known (0 otherwise).
struct ConfigError : std::runtime_error {
  int line = 0;
  explicit ConfigError(const std::string& msg, int line_no = 0)
      : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + msg : msg),
        line(line_no) {}
};

// Level-set gradient collapsed inside the tracked band.
struct DegenerateFoliation : NumericalError {
  using NumericalError::NumericalError;
};

}  // namespace rarewave
