#pragma once

#include <stdexcept>
#include <string>

namespace prd {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed an argument outside the operation's contract.
class RejectedInput : public Error {
 public:
  using Error::Error;
};

/// On-disk data could not be parsed (bad archive, wrong shape, missing key).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Manifest and payload files disagree.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class GenerationRetryExhausted : public Error {
 public:
  using Error::Error;
};

/// Operation requires generator metadata the problem does not carry.
class UnsupportedProblem : public Error {
 public:
  using Error::Error;
};

/// Weights could not be imported; message names the offending layer.
class LoadError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

/// Internal contract broken by the caller, e.g. a mixed-label batch.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace prd
