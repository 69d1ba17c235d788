#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace rsf {

/// Seed mixing. Every random stream in the engine is derived from a master
/// seed and a tuple of integer keys (tree index, case index, purpose tag...),
/// so results never depend on the order in which work items run.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t k : keys) {
    h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
  }
  return h;
}

// Purpose tags used as the first derivation key.
enum class Stream : std::uint64_t {
  tree = 1,
  oob_route = 2,
  vimp = 3,
  test_route = 4,
  simulate = 5,
  missing = 6,
  summary = 7,
  iteration = 8,
  bench = 9,
  fallback = 10,
};

/// Random stream: a standard 64-bit Mersenne twister plus the handful of
/// draws the engine needs. The draws are written out explicitly instead of
/// using <random> distributions, whose output is implementation-defined.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) : engine_(derive_seed(seed, keys)) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  bool coin() { return (engine_() >> 63) != 0; }

  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

 private:
  std::mt19937_64 engine_;
};

/// One fair bit from a hashed key; used where a whole stream per draw would be wasteful.
inline bool hashed_coin(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return (derive_seed(seed, keys) >> 63) != 0;
}

}  // namespace rsf
