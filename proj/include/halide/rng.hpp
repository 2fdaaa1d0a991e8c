#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace halide {

// All randomness flows from one root seed through named sub-streams:
// Rng(seed, "em", k) and Rng(seed, "em", k) are identical, Rng(seed, "ticc", k)
// is unrelated. Sampling helpers avoid std::*_distribution so that streams
// stay stable across standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix(seed)) {}

  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0)
      : engine_(splitmix(seed ^ splitmix(fnv(stream) + 0x9e3779b97f4a7c15ULL * (index + 1)))) {}

  std::uint64_t next_u64() { return engine_(); }

  // in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Box-Muller; the second value is discarded so each call consumes a fixed
  // number of engine draws.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static std::uint64_t fnv(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::mt19937_64 engine_;
};

}  // namespace halide
