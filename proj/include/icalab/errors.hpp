#pragma once

#include <stdexcept>
#include <string>

namespace icalab {

// Error categories map onto the CLI exit codes:
//   UsageError -> 2, ConfigError -> 3, DataError -> 4, NumericError -> 5.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace icalab
