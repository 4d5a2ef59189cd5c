#pragma once

#include <stdexcept>
#include <string>

namespace stagemix {

/// Root of every exception thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (bad window size, unknown id, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text: a schedule, registry, log or state file.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace stagemix
