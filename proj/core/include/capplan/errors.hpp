#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace capplan {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value outside the domain of an operation (e.g. an action index >= N).
class DomainError : public Error {
 public:
  using Error::Error;
};

// One or more invariant violations. what() joins every violation.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations);
  explicit ValidationError(const std::string& violation)
      : ValidationError(std::vector<std::string>{violation}) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

// Malformed input file. Line numbers are 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& detail);

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A loss or parameter became NaN/inf. term() names the offending quantity.
class NumericError : public Error {
 public:
  NumericError(std::string term, const std::string& detail);
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace capplan
