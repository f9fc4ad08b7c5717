#pragma once

#include <stdexcept>
#include <string>

namespace rcnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible or invalid tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An op produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class AutogradError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rcnet
