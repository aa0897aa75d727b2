#pragma once

#include <stdexcept>
#include <string>

namespace eegdm {

// Failures that reach the command line. Precondition violations inside the
// library use the standard std::invalid_argument / std::out_of_range.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eegdm
