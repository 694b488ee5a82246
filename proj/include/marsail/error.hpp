#pragma once

#include <stdexcept>
#include <string>

namespace marsail {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A CTC target cannot be produced by any alignment of the given length.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

/// Geometry input collapses (empty mask, collinear points, zero-area polygon...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Exhaustive oracles refuse problems above their size limit.
class SizeLimitError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent configuration (taxonomy, weights, pipeline config).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (unreadable files, bad headers, unknown labels).
class InputError : public Error {
 public:
  using Error::Error;
};

/// An internal invariant failed at runtime.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvariantViolation(what);
}

}  // namespace detail
}  // namespace marsail
