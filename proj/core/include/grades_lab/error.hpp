#pragma once

#include <stdexcept>
#include <string>

namespace grades_lab {

// Every failure raised by the library derives from Error so callers can
// catch one type at the CLI boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller-supplied data: non-finite entries, out-of-range tokens, empty sets.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-convergence, non-finite gradients, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// API misuse: step regression, stale activation cache, unknown component.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace grades_lab
