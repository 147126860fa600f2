#pragma once

#include <stdexcept>
#include <string>

namespace pairlab {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (shape, range, symmetry...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A factorization or solve could not produce a usable result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDivergence : public NumericalError {
 public:
  TrainingDivergence(int epoch, const std::string& what)
      : NumericalError("training diverged in epoch " + std::to_string(epoch) +
                       ": " + what),
        epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A file was readable but its content is malformed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A model or container file declares a format version this build cannot read.
class UnsupportedVersion : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace pairlab
