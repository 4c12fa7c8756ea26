#pragma once

#include <stdexcept>
#include <string>

namespace fmdp {

// Input text could not be read (instance files, config files, checkpoints).
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, int column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", column " +
                           std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}
  explicit ParseError(const std::string& what) : std::runtime_error(what), line_(0), column_(0) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

// A structurally well-formed object violates a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// A training loss became non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// action_posterior was asked about a successor no action can produce.
class UnreachableSuccessorError : public std::runtime_error {
 public:
  UnreachableSuccessorError() : std::runtime_error("unreachable successor") {}
};

}  // namespace fmdp
