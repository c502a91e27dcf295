// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <stdexcept>
#include <string>

namespace facl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed files, bad flags, inconsistent configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Tensor extents that do not fit together.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// NaN/Inf in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace facl
