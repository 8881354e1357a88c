#pragma once

#include <stdexcept>
#include <string>

namespace axial {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidPermutation : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite input was required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data (volume or checkpoint files).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace axial
