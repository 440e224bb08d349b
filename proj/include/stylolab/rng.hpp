#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace stylolab {

/// Deterministic RNG. Wraps std::mt19937_64 but implements the value
/// distributions by hand: the standard distribution objects are not
/// bit-reproducible across library implementations, and every artifact
/// output is required to be reproducible given the seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed), seed_(seed) {}

  /// Independent substream: hashes (seed, tag) so module streams never
  /// overlap even when tags are small consecutive integers.
  Rng substream(uint64_t tag) const {
    uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL + tag);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return Rng(x);
  }

  uint64_t bits() { return gen_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, unbiased.
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  size_t index(size_t n) { return static_cast<size_t>(below(static_cast<uint64_t>(n))); }

  /// Standard normal via Box-Muller (no cached spare; deterministic stream).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  /// Sample an index from an unnormalized weight vector.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (r < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  uint64_t seed_ = 0;
};

}  // namespace stylolab
