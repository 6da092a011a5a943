#pragma once

#include <stdexcept>
#include <string>

namespace smart {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse (wrong mode, out-of-range argument, non-scalar loss, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (bad token id, empty region set, bad file line).
class InputError : public Error {
 public:
  using Error::Error;
};

/// File system failures; the message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Numerical divergence detected during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace smart
