#pragma once

#include <stdexcept>
#include <string>

namespace advi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents or lengths that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced, divergence, or a degenerate quantity (zero denominator).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated, tampered or version-mismatched files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or call preconditions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace advi
