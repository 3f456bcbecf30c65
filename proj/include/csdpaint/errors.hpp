#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace csdpaint {

// Base class for all errors raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A configuration value is missing or invalid. `key()` names the offending
// dotted config key (may be empty when the error is not tied to a key).
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Unreadable, truncated or malformed input files.
class InputError : public Error {
 public:
  using Error::Error;
};

// Tensor/map shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A score provider violated its contract (bad shape, non-finite output,
// protocol failure).
class ProviderError : public Error {
 public:
  using Error::Error;
};

}  // namespace csdpaint
