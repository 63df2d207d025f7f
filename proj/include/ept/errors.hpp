#pragma once

#include <stdexcept>
#include <string>

namespace ept {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs that violate a documented precondition. The CLI maps these to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParameterError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ContractError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class CapacityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegenerateInputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Non-finite values showing up mid-computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint checksum or version failures.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint directory does not agree with the expected tensor set.
class ManifestError : public Error {
 public:
  using Error::Error;
};

}  // namespace ept
