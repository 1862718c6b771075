#pragma once

// Shared plumbing: error types, seeded RNG substreams, CSV number formatting,
// FNV-1a hashing for config fingerprints.

#include <charconv>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gridvolt {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvariantViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularJacobian : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(double residual_, int iterations_)
      : std::runtime_error("power flow did not converge: residual " +
                           std::to_string(residual_) + " after " +
                           std::to_string(iterations_) + " iterations"),
        residual(residual_),
        iterations(iterations_) {}
  double residual;
  int iterations;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derive an independent seed for a named component from one root seed, so
/// every source of randomness (profiles, init, exploration, k-means, ...)
/// is reproducible on its own.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
  return splitmix64(root ^ fnv1a64(name));
}

inline std::mt19937_64 substream_rng(std::uint64_t root, std::string_view name) {
  return std::mt19937_64(substream_seed(root, name));
}

/// Shortest round-trip decimal form. Used for every double written to CSV or
/// JSON output so identical runs produce identical bytes.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, 16);
  return std::string(buf, res.ptr);
}

}  // namespace gridvolt
