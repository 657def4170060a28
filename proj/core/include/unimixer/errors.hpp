#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace unimixer {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A structural constraint of an operation is violated (e.g. TokenMixer with H != T).
class ConstraintError : public Error {
 public:
  using Error::Error;
};

// A numeric value falls outside the range an operation can handle.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Caller-side precondition on values (not shapes) is violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration (files, variants, field references).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given input (e.g. AUC on a single class).
class MetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace unimixer
