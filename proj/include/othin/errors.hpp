#pragma once

#include <stdexcept>
#include <string>

namespace othin {

// Shapes of inputs disagree (vector length vs. dimension, mask vs. data, ...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical precondition failed (singular orthonormalization, non-finite input).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Masked subspace update with fewer observed coordinates than the rank.
class IllPosedUpdate : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The mixture has no usable component (e.g. every leaf weight is zero).
class InvalidModel : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed stream input. Carries the 1-based line (or record) number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace othin
