#pragma once

#include <stdexcept>
#include <string>

namespace freqclick {

// Operand shapes are incompatible with the requested operation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A documented precondition of an operation was violated by the caller.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A configuration value is invalid or describes an unusable setup.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged. Carries the (0-based) epoch in which it happened.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int epoch)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Malformed file on disk (checkpoint, manifest, image).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace freqclick
