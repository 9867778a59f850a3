#pragma once

#include <stdexcept>
#include <string>

namespace scglr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input (dimensions, labels, configuration).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A design block, constraint set or metric lost full rank.
class RankDeficiency : public Error {
 public:
  using Error::Error;
};

/// Overflow or other non-finite intermediate quantity.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace scglr
