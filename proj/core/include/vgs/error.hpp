#pragma once

#include <stdexcept>
#include <string>

namespace vgs {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape or dimensionality mismatch between tensors or parameters.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Violated precondition or invariant in user-facing inputs
/// (configs, manifests, command line values).
class ValidationError : public Error {
public:
  using Error::Error;
};

/// Malformed or truncated on-disk data (checkpoints, feature files, JSONL).
class FormatError : public Error {
public:
  using Error::Error;
};

/// Non-finite values, degenerate norms, or failed numerical checks.
class NumericError : public Error {
public:
  using Error::Error;
};

}  // namespace vgs
