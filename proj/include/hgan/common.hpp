#pragma once

#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hgan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extent/shape violations (mismatched dims, non-integral output sizes).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter combinations (spec invariant violations).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API contract violations (non-scalar loss, probability rows off by more
// than tolerance, insufficient data).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced by a forward operation on finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or corrupted files (dataset records, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

template <class... Args>
[[noreturn]] inline void throw_shape(Args&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw ShapeError(os.str());
}

}  // namespace hgan
