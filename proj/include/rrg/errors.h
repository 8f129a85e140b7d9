#pragma once

#include <stdexcept>

namespace rrg {

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input file exists but its contents are invalid (bad image, schema mismatch, corrupt checkpoint).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rrg
