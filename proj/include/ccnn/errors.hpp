#pragma once

#include <stdexcept>
#include <string>

namespace ccnn {

// Base for every error raised by the library. The CLI maps the subclasses
// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument to an operation (bad level, empty batch, bad fraction).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Inconsistent configuration: shape mismatch, incompatible model/dataset.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or invalid input data. Carries the 1-based line when known.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_ = 0;
};

// Enumeration would exceed the configured bound.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite objective.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace ccnn
