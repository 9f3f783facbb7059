#pragma once

#include <stdexcept>
#include <string>

namespace cmreg {

// Input document could not be parsed; `location` is "line N" or a JSON pointer.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string location, const std::string& what)
      : std::runtime_error(location + ": " + what), location_(std::move(location)) {}
  const std::string& location() const noexcept { return location_; }

 private:
  std::string location_;
};

// Parsed data violates a dataset/trial invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad sampler, simulation, or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Covariance not positive semi-definite, factorization failure, or a
// sampler that cannot start. `trial_id` is empty when not trial-specific.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string trial_id, const std::string& what)
      : std::runtime_error(trial_id.empty() ? what : "trial '" + trial_id + "': " + what),
        trial_id_(std::move(trial_id)) {}
  const std::string& trial_id() const noexcept { return trial_id_; }

 private:
  std::string trial_id_;
};

}  // namespace cmreg
