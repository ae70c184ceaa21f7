#pragma once

#include <stdexcept>

namespace specnet {

// Malformed, missing or inconsistent input data (files, manifests, labels).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace specnet
