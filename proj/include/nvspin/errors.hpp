#pragma once

#include <stdexcept>
#include <string>

namespace nvspin {

// Base of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or non-finite arguments.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Well-formed values that cannot be simulated as configured (step policy,
// uncalibrated pulses, unsupported frame/drive combinations).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: fits that cannot seed, traces without oscillation,
// invariant breaches detected at run time.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace nvspin
