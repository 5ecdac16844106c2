#pragma once

#include <stdexcept>
#include <string>

namespace permattn {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A structural precondition on an input failed (non-bijective index array,
// non-positive features, non-commuting permutations, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value fell below a guarded floor (reciprocal, attention denominator).
class NumericGuardError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller misused an API: bad argument ranges, non-scalar backward root.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Configuration text could not be parsed or violates a constraint.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace permattn
