#pragma once

#include <stdexcept>
#include <string>

namespace tge {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// The mesh carries no per-vertex colors. Callers may catch this and apply
/// their own default color policy.
class MissingColorError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Zero-extent or zero-area input where a positive measure is required.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape or width mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint architecture fingerprint does not match the expected config.
class FingerprintError : public Error {
 public:
  using Error::Error;
};

/// Tournament protocol violation (stale pair, duplicate vote, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace tge
