#pragma once

#include <stdexcept>
#include <string>

namespace gsproto {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Array or image dimensions that do not agree.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Quaternion with zero norm, or a covariance that cannot be inverted.
class DegenerateError : public Error {
public:
  using Error::Error;
};

/// NaN or Inf in parameters, losses, or decoded prototypes.
class NonFiniteError : public Error {
public:
  using Error::Error;
};

/// Training produced a non-finite loss or parameter. The message names the iteration and, when
/// one was written, the state dump.
class DivergenceError : public NonFiniteError {
public:
  using NonFiniteError::NonFiniteError;
};

/// Invalid argument outside the domain of an operation (e.g. sampling more anchors than points).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Malformed file contents. The message carries a byte offset or line number.
class ParseError : public Error {
public:
  using Error::Error;
};

} // namespace gsproto
