#pragma once

#include <stdexcept>
#include <string>

namespace pedcc {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// log of a non-positive value, division by zero, or a non-finite result.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller passed a value outside an operation's documented range.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A precondition on graph or object state was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed file contents. line() is 1-based, 0 when not line-oriented.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace pedcc
