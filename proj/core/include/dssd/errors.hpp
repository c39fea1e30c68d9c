#pragma once

#include <stdexcept>
#include <string>

namespace dssd {

/// Tensor or layer shapes that cannot be combined.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf produced by a forward, backward or update step.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent network, anchor, schedule or data configuration.
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt or incompatible on-disk data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dssd
