#pragma once

#include <stdexcept>
#include <string>

namespace bissm {

/// Base of every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration: unknown keys, invalid hyperparameters, missing paths.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or insufficient input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed factorizations.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Incompatible tensor shapes handed to an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace bissm
