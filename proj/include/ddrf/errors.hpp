#pragma once

#include <stdexcept>

namespace ddrf {

/// Bad user input: config values, file layouts, CLI arguments. The CLI maps
/// it to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ddrf
