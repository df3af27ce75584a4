#pragma once

#include <stdexcept>
#include <string>

namespace flowtrack {

// Each category maps to a CLI exit code (see tools/main.cpp).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flowtrack
