#pragma once

#include <stdexcept>
#include <string>

namespace halide {

// Raised for malformed inputs: bad files, schema violations, inconsistent
// dimensions. CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a numerical routine cannot produce a usable result
// (non-finite loss, non-PSD input). CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace halide
