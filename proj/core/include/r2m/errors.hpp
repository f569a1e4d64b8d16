#pragma once

#include <stdexcept>
#include <string>

namespace r2m {

/// Contract violation: bad shapes, invalid configuration, out-of-range labels.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// File-level failure: missing file, bad magic, truncation, unwritable path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace r2m
