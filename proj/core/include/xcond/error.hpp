#pragma once

#include <stdexcept>
#include <string>

namespace xcond {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (records, vocab files, checkpoints, rule files).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Stored hash does not match the content it covers.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Configuration validation failure; the message lists every offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {
[[noreturn]] inline void fail_precondition(const std::string& what) { throw PreconditionError(what); }
}  // namespace detail

inline void require(bool condition, const std::string& what) {
  if (!condition) detail::fail_precondition(what);
}

}  // namespace xcond
