#ifndef S3_ERROR_HPP
#define S3_ERROR_HPP

#include <stdexcept>
#include <string>

namespace s3 {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied argument violates an operation's precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside a function's mathematical domain (e.g. phi(-1)).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Potentials were used for evaluation before the solve converged.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// A numeric quantity overflowed or became non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable input file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace s3

#endif  // S3_ERROR_HPP
