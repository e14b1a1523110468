#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace posfuse {

inline constexpr std::string_view kVersion = "0.1.0";

// Error categories map onto the CLI exit-code contract:
// config -> 2, data -> 3, numeric -> 4.

/// Invalid configuration (bad scenario spec, inconsistent mode/loss, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent data (shape mismatch, degenerate stats, bad file).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numeric failure during computation (NaN loss, non-finite gradient).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Precondition violation on an operation argument.
struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// FNV-1a 64-bit over raw bytes. Used for dataset/config provenance hashes.
inline std::uint64_t fnv1a(std::span<const std::byte> bytes,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s) {
  return fnv1a(std::as_bytes(std::span{s.data(), s.size()}));
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace posfuse
