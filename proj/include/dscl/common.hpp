#pragma once

#include <stdexcept>
#include <string>

namespace dscl {

// Every failure the library reports derives from Error so callers can
// catch the whole family in one place (the CLI maps these to exit codes).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// The autodiff graph is malformed.
class GraphError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, failed convergence, degenerate spectra.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing input data.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace dscl
