#pragma once

#include <stdexcept>
#include <string>

namespace courier {

// Base for every error raised by the library. The CLI maps subclasses onto
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input is well-formed but numerically degenerate (zero norm, all keys masked).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent data (unknown item ids, bad file contents).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A metric is not defined for the given input (e.g. AUC of a single class).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// A required input file or directory does not exist.
class MissingInputError : public Error {
 public:
  using Error::Error;
};

// A stage needs an artifact produced by an earlier stage that is absent.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace courier
