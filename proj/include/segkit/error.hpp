#pragma once

#include <stdexcept>
#include <string>

namespace segkit {

// Base of every exception thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents: vocabularies, JSONL records, checkpoints.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition on an argument value was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Training diverged or a numeric invariant broke at runtime.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace segkit
