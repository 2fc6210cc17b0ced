#pragma once

#include <stdexcept>
#include <string>

namespace amlp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A matrix expected to be positive semi-definite has a significantly negative eigenvalue.
class NotPsdError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Invalid configuration (head counts, inner dimensions, bench settings).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid data handed to a model, e.g. token ids out of range.
class InputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace amlp
