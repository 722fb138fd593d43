#pragma once

#include <stdexcept>
#include <string>

namespace rescalk {

// Base class for every error raised by the library. The CLI maps the
// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent dimensions between arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument value (k out of range, bad config, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed or invariant-violating input data (file contents, tensors).
class DataError : public Error {
 public:
  using Error::Error;
};

// File system failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// A non-finite value showed up in a factor or intermediate.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Collective contract broken: mismatched calls, timeouts, aborted peers.
class CollectiveError : public Error {
 public:
  using Error::Error;
};

}  // namespace rescalk
