#pragma once

#include <stdexcept>
#include <string>

namespace twobox {

// Bad input: shapes, ranges, schema. The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation ran but could not produce a trustworthy answer. Exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace twobox
