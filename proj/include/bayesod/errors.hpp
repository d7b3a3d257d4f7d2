#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bayesod {

// Malformed or out-of-contract input values.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A factorization or solve failed (non-PD covariance, singular precision).
class NumericalError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A serialized record could not be decoded. line() is 1-based, 0 if unknown.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace bayesod
