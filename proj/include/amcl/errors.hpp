#pragma once

#include <stdexcept>
#include <string>

namespace amcl {

/// Caller broke a documented precondition (shape, range, dimension).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public IoError {
 public:
  using IoError::IoError;
};

class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

/// Discriminator loss collapsed to ~0 for several consecutive epochs.
class ModeCollapseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace amcl
