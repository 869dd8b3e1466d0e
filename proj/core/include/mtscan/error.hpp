#pragma once

#include <stdexcept>
#include <string>

namespace mtscan {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward or backward computation produced NaN or Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// An index map that was required to be a bijection is not one.
class PermutationError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (divisibility, unknown keys, bad values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Objects used out of protocol, e.g. deserializing a sequence with no index map.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Invalid or missing training data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given inputs.
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary file (bad magic, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Bad command-line usage.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtscan
