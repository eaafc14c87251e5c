// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace skd {

// Each error class maps onto one CLI exit code (see tools/skd_cli.cpp).

/// Invalid hyperparameter, malformed config, or violated precondition on a
/// user-supplied setting.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed data handed to an operation (out-of-vocabulary token, length
/// mismatch, empty sequence).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss, gradient or parameter update.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Broken internal contract (shape mismatch, impossible sampler state).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// File system or parse failure on an artifact.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace skd
