#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <utility>

namespace telto {

/// Deterministic random source. All distributions are derived by hand from the
/// raw mt19937_64 stream (whose output is fully specified by the standard), so
/// sequences are reproducible across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(bits());  // full 64-bit span
    const std::uint64_t limit = range * (UINT64_MAX / range);
    std::uint64_t x = bits();
    while (x >= limit) x = bits();
    return lo + static_cast<std::int64_t>(x % range);
  }

  /// Standard normal via Box-Muller (no cached second value, so the draw
  /// count per call is fixed).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Exact Poisson draw. Knuth's product method on chunks of lambda <= 30
  /// (sums of independent Poissons are Poisson, and exp(-30) stays in range).
  std::int64_t poisson(double lambda) {
    std::int64_t total = 0;
    while (lambda > 30.0) {
      total += poisson_knuth(30.0);
      lambda -= 30.0;
    }
    return total + poisson_knuth(lambda);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const std::int64_t n = last - first;
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::swap(first[i], first[uniform_int(0, i)]);
    }
  }

 private:
  std::int64_t poisson_knuth(double lambda) {
    if (lambda <= 0.0) return 0;
    const double limit = std::exp(-lambda);
    std::int64_t k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  std::mt19937_64 gen_;
};

}  // namespace telto
