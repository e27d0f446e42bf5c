#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace msemark {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed options, schema mismatches, invalid hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid input data. Carries the 1-based source line when known (0 otherwise).
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A sampler or fitting step produced a non-finite or degenerate quantity.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A distribution was parameterized outside its domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

}  // namespace msemark
