#pragma once

#include <stdexcept>

namespace zimm {

/// Bad user input: malformed files, invalid flags or configuration values.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An artifact does not match the hash recorded when it was produced.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace zimm
