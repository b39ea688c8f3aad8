// errors.hpp — exception categories shared by the library and the CLI

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tlsphonon {

// Invalid inputs, violated preconditions, schema problems.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Fock truncation too small for the requested displacement.
class TruncationError : public ConfigError {
 public:
  TruncationError(const std::string& what, int required_n_max)
      : ConfigError(what), required_n_max_(required_n_max) {}
  int required_n_max() const noexcept { return required_n_max_; }

 private:
  int required_n_max_;
};

// Composite space larger than the dense-storage guard.
class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Integrator or optimizer failure.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tlsphonon
