#pragma once

#include <stdexcept>
#include <string>

namespace mmsc {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration or command-line input. CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: violated precondition, wrong call sequence.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Shape disagreement between tensors; message names both shapes.
class DimensionError : public UsageError {
 public:
  using UsageError::UsageError;
};

// Malformed or truncated input file. CLI exit code 3.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Out-of-range id in graph or file data. CLI exit code 3.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Non-finite value or other numerical abort. CLI exit code 4.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Zero-norm vector or similar input on which the operation is undefined.
class DegenerateInputError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Closure evaluated twice at the same point gave different values.
class DeterminismError : public Error {
 public:
  using Error::Error;
};

// Negative-sampling pool smaller than the requested draw.
class SamplingPoolError : public UsageError {
 public:
  using UsageError::UsageError;
};

// Requested more injected edges than the graph has room for.
class CapacityError : public UsageError {
 public:
  using UsageError::UsageError;
};

// Test set references items the model does not cover.
class CoverageError : public UsageError {
 public:
  using UsageError::UsageError;
};

// Checkpoint config hash does not match the active configuration.
class IncompatibilityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// External judge process failed on a pair; callers skip and count.
class JudgeError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmsc
