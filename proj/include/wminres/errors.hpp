#pragma once

#include <stdexcept>
#include <string>

namespace wminres {

/// Base of all library exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A weight coefficient left the open half-line (0, inf).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The saddle-point matrix is numerically singular. In practice this means
/// the trial/test pair is not inf-sup compatible (or B lost column rank).
class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

/// An object was used out of order (stale cache, missing factorization).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or a label that cannot be normalized.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace wminres
