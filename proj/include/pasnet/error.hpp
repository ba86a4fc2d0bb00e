#pragma once

#include <stdexcept>
#include <string>

namespace pasnet {

// Bad model/config wiring: shape mismatches, out-of-range hyperparameters,
// unknown config keys.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad data fed to an operation: non-finite values, empty datasets,
// malformed files.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation called in the wrong order (e.g. backward before forward) or on
// an object whose internal state violates its invariants.
struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training-loop failures: non-finite gradients or loss divergence.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace pasnet
