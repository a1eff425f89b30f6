#pragma once

#include <stdexcept>
#include <string>

namespace x2f {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed file payloads (bad magic, truncation, bad CSV rows).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid user configuration or precondition violations on inputs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace x2f
