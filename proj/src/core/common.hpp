#pragma once

#include <stdexcept>
#include <string>

namespace fbind {

// Well-formed input that violates a documented contract (bad class id,
// delta out of range, shape mismatch, unknown config key...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem or codec failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fbind
