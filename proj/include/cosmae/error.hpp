#pragma once

#include <stdexcept>
#include <string>

namespace cosmae {

// Error taxonomy shared by the library and the CLI exit-code mapping:
//   ConfigError  -> invalid configuration / file contents      (exit 2)
//   UsageError   -> precondition violated by the caller        (exit 2)
//   NumericError -> non-finite values or numeric breakdown     (exit 3)
//   IoError      -> filesystem / format failures               (exit 4)
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cosmae
