#pragma once

#include <stdexcept>
#include <string>

namespace sta4clc {

/// Malformed or inconsistent input data (files, overrides, references).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values produced during numerical work (losses, gradients).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sta4clc
