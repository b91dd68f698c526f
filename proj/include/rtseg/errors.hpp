#pragma once

#include <stdexcept>
#include <string>

namespace rtseg {

// Error taxonomy mapped onto CLI exit codes:
//   ConfigError -> 1, DataError -> 2, NumericError -> 3.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, failed gradient checks, shape/domain violations inside
// numeric code.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rtseg
