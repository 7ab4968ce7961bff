#pragma once

#include <stdexcept>
#include <string>

namespace bsvie {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller supplied arguments outside an operation's domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value or a regression could not be solved.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace bsvie
