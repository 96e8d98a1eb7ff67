#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace tailchain {

// Explicit random stream. The engine is std::mt19937_64 (bit-exact output is
// pinned by the standard); the value transforms below are hand-rolled because
// std::normal_distribution and friends are implementation-defined, which would
// break byte-identical reproducibility across standard libraries.
//
// Splitting rule (documented contract): the child stream with index k of a
// stream whose seed is s is seeded with
//     splitmix64(splitmix64(s ^ 0x9E3779B97F4A7C15) + k).
// Children with distinct indices are independent for all practical purposes
// and depend only on (s, k), never on how much the parent has been consumed,
// so replicate k produces identical values no matter which thread runs it.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  // Child stream k; see the splitting rule above.
  RngStream child(std::uint64_t k) const {
    return RngStream(splitmix64(splitmix64(seed_ ^ 0x9E3779B97F4A7C15ULL) + k));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on (0, 1]: 53-bit mantissa, never 0 so logs and inverse powers are safe.
  double uniform() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform on [0, 1).
  double uniform_co() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_below(std::uint64_t n) {
    // Rejection to kill modulo bias; loop runs once in the overwhelming majority of calls.
    const std::uint64_t limit = n * ((~0ULL) / n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal by Marsaglia's polar method (deterministic given the stream).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform_co() - 1.0;
      v = 2.0 * uniform_co() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  double exponential() { return -std::log(uniform()); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tailchain
