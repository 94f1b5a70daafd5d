#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace loglake {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed JSON; position is the byte offset reported by the parser.
class ParseError : public Error {
 public:
  ParseError(std::size_t position, const std::string& what)
      : Error(what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// Well-formed JSON that violates the record schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class TooFewRows : public Error {
 public:
  using Error::Error;
};

class MismatchedN : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace loglake
