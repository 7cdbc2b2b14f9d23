#pragma once

#include <stdexcept>
#include <string>

namespace trajpred {

// Every recoverable failure in the library is reported through this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace trajpred
