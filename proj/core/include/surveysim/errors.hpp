#pragma once

#include <stdexcept>
#include <string>

namespace surveysim {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file (bad JSON, missing keys, wrong types). Messages
/// carry the file name and a line or record locus.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A structurally well-formed input violates a domain invariant. Messages
/// name the invariant and the offending record id.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem-level failure (unreadable path, write failure).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Caller misuse of an operation (bad argument, violated precondition).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Text-generation backend failure. `kind` distinguishes transport faults
/// (retried), credential problems (not retried), rate limiting (retried
/// with backoff) and empty completions.
class BackendError : public Error {
 public:
  enum class Kind { transport, auth, rate_limit, empty_response, script_miss };

  BackendError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// run_experiment exceeded its failure ceiling; message carries the
/// per-pair failure summary.
class RunAbortedError : public Error {
 public:
  using Error::Error;
};

}  // namespace surveysim
