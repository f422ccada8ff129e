#pragma once

#include <stdexcept>
#include <string>

namespace nvs {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Resolution, shape, or length disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes: bad magic, truncated payload, wrong version.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace nvs
