#pragma once

#include <stdexcept>
#include <string>

namespace ems {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files; the message carries the file location.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace ems
