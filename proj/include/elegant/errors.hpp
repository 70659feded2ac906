#pragma once

#include <stdexcept>
#include <string>

namespace elegant {

/// Base class for every error raised by the engine. The CLI maps the
/// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented invariant (bad box, empty label, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Two inputs claim the same identity (duplicate subject, duplicate id).
class ConflictError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SubjectNotFoundError : public Error {
 public:
  using Error::Error;
};

/// Dataset contains no non-empty graph, so m* cannot be estimated.
class CannotCalibrateError : public Error {
 public:
  using Error::Error;
};

/// Transport-level failure that survived every retry.
class BackendError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// A backend answered, but the payload does not satisfy the wire schema.
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

class EmptyResponseError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

/// Strict mock playback saw a request with no recorded response.
class MissingFixtureError : public BackendError {
 public:
  using BackendError::BackendError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace elegant
