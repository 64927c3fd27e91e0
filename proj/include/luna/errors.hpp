#pragma once

#include <stdexcept>
#include <string>

namespace luna {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor dimension mismatch. Messages name both offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (corpus files, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration. Messages name the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, divergence, failed numeric verification.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem problems (missing paths, write failures).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace luna
