// Shared error types and small helpers.
//
// Exceptions map onto the CLI exit codes: ConfigError -> 2,
// NumericalError -> 3, IoError -> 4.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ulab {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Binary payloads are little-endian f64/u32; refuse to run on BE hosts.
inline bool host_is_little_endian() {
  const std::uint32_t probe = 1u;
  return *reinterpret_cast<const unsigned char*>(&probe) == 1u;
}

}  // namespace ulab
