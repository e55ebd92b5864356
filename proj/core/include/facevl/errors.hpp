// Copyright 2026 The facevl Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace facevl {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied an argument outside the operation's domain.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Tensor or image dimensions do not satisfy an operation's shape contract.
class DimensionError : public InputError {
 public:
  using InputError::InputError;
};

/// Invalid or inconsistent configuration (maps to CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or degenerate numerics (maps to CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A geometric transform or point set has no (unique) solution or inverse.
class SingularityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// File-level failures: missing, unreadable or malformed artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace facevl
