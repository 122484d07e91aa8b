#pragma once

#include <stdexcept>
#include <string>

namespace s3f {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, tables, structures).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid or incomplete run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Solver failure, divergence or non-finite values during computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace s3f
