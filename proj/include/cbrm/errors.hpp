#pragma once

#include <stdexcept>
#include <string>

namespace cbrm {

// Error taxonomy maps one-to-one onto CLI exit codes:
// ConfigError -> 1, FormatError -> 2, NumericError -> 3.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cbrm
