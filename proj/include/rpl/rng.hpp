#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "rpl/error.hpp"

namespace rpl {

/// Seeded random stream with a fixed, platform-independent sampling recipe.
///
/// Bits come from std::mt19937_64, whose output sequence is pinned by the C++
/// standard. Everything layered on top is done here rather than through the
/// <random> distributions, which are implementation-defined:
///   uniform()  = (bits >> 11) * 2^-53                    in [0, 1)
///   normal()   = Box-Muller on u1 = 1 - uniform(), u2 = uniform():
///                r = sqrt(-2 ln u1), z0 = r cos(2 pi u2), z1 = r sin(2 pi u2)
///                z0 is returned first, z1 is cached for the next call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    detail::require(n > 0, "uniform_int range must be nonempty");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Seed for an independent sub-stream, a pure function of (seed, stream).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// `count` i.i.d. Gaussian draws with the given mean and standard deviation.
inline std::vector<double> randn(Rng& rng, std::size_t count, double mean, double stddev) {
  detail::require(stddev >= 0.0, "randn stddev must be nonnegative");
  std::vector<double> out(count);
  for (double& v : out) v = rng.normal(mean, stddev);
  return out;
}

}  // namespace rpl
