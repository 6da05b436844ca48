#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sapa {

inline constexpr int version_major = 1;
inline constexpr int version_minor = 0;

// Tensor/operator argument shapes do not line up.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A configuration value is invalid (even kernel size, bad group count, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// File reading/writing failed or the file is not a valid SAPT container.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void require_cfg(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace detail

}  // namespace sapa
