#pragma once

#include <stdexcept>
#include <string>

namespace duacm {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// A precondition or invariant on caller-supplied input does not hold.
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

/// Malformed file contents. The message carries the line or record index.
class ParseError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "parse"; }
};

/// Well-formed data that disagrees with its declared schema.
class SchemaError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "schema"; }
};

class NotFoundError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "not_found"; }
};

/// A state transition that is illegal in the current state (e.g. excluding
/// every diagnosis of a session).
class ConflictError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "conflict"; }
};

}  // namespace duacm
