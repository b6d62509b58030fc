#pragma once

#include <stdexcept>
#include <string>

namespace ldalign {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes (validation failures -> 1, config/IO -> 2).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sequence does not fit the model's context window.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter, empty batch/dataset, bad argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// All latent distances in a cohort are zero, so S_phi = 0.
class DegenerateCohortError : public Error {
 public:
  using Error::Error;
};

// Loss or gradient became NaN/inf during training.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class VerificationError : public Error {
 public:
  VerificationError(const std::string& what, long offending_index = -1)
      : Error(what), offending_index_(offending_index) {}
  long offending_index() const { return offending_index_; }

 private:
  long offending_index_;
};

}  // namespace ldalign
