#pragma once

// Shared basics: error taxonomy, matrix aliases, deterministic hashing and
// seed derivation, and locale-independent number formatting.  Everything in
// the library lives in namespace peerlab.

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace peerlab {

inline constexpr const char* kVersion = "1.0.0";

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

// Invalid or inconsistent inputs (bad shapes, ids, domains, config values).
struct validation_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A numeric routine left its supported regime (non-finite values, etc.).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A statistical estimation failed (rank deficiency, weak instrument,
// non-convergent likelihood search).
struct estimation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File system / serialization failures.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a 64-bit over a byte string.  Used to fingerprint configurations so
// artifacts record which settings produced them.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// splitmix64 finalizer; good avalanche for seed derivation.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic per-purpose seed: mixes a base seed with one or more stream
// identifiers so independent random streams never alias.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  return mix64(mix64(mix64(base ^ mix64(a)) ^ mix64(b)) ^ mix64(c));
}

// Shortest round-trip decimal formatting (%.17g): reloading the printed text
// reproduces the exact double, which is what makes artifacts byte-stable.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// Sample standard deviation (denominator n-1); zero for n < 2.
inline double sample_sd(const Vector& v) {
  const auto n = v.size();
  if (n < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / double(n - 1));
}

}  // namespace peerlab
