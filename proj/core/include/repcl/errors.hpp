#pragma once

#include <stdexcept>
#include <string>

namespace repcl {

/// Invalid or inconsistent configuration. The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input file (bad JSON, bad line structure).
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

/// Well-formed data violating a domain invariant (span range, tiny class, ...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An operation was called with input it cannot handle.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Shape or dimension mismatch between structures that must agree.
struct ShapeError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace repcl
