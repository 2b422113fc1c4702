#pragma once

#include <stdexcept>
#include <string>

namespace qmon {

// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters or violated preconditions. The CLI maps this to exit 2.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message, std::string key = {})
      : Error(message), key_(std::move(key)) {}

  // Name of the offending configuration key, empty when not applicable.
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Failure during integration. The CLI maps this to exit 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Every grid node lost its mass; the truncated domain is too small.
class MeasureDied : public NumericalError {
 public:
  MeasureDied() : NumericalError("measure died: all mass lost to grid truncation") {}
};

// Explicit scheme outside its stability region.
class StabilityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace qmon
