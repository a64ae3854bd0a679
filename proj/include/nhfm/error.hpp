#pragma once

#include <stdexcept>
#include <string>

namespace nhfm {

// Exception families map onto CLI exit codes: usage 1, data 2, numerical 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible on-disk artifact (dataset, schema, checkpoint).
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Shape or rank disagreement between tensor operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

}  // namespace nhfm
