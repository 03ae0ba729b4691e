#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdforge {

// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed input text; line is 1-based, 0 when not applicable.
class ParseError : public Error {
public:
  ParseError(const std::string &what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}

  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class UnsupportedFormat : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace sdforge
