#pragma once

#include <stdexcept>
#include <string>

namespace srank {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf or otherwise out-of-domain numeric input.
class InputDomainError : public Error {
 public:
  using Error::Error;
};

// Problem size beyond what the dense oracle path accepts.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Input for which the requested quantity is undefined (e.g. 0/0).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Caller passed an invalid argument (bad threshold, length mismatch, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// File-format violation. field() names the offending part of the input.
class ParseError : public Error {
 public:
  ParseError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// The reward embedder changed underneath a training run.
class FrozenReferenceError : public Error {
 public:
  using Error::Error;
};

// Arithmetic would overflow (importance ratio out of range, ...).
class NumericGuardError : public Error {
 public:
  using Error::Error;
};

}  // namespace srank
