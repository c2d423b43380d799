#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fscil {

/// Reproducible pseudorandom stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are implementation-defined, so
/// uniform and normal variates are derived here:
///   - uniform(): top 53 bits of one engine draw, scaled to [0, 1)
///   - normal(): Marsaglia polar method, caching the second variate
///   - below(n): rejection sampling on a 64-bit draw (unbiased)
/// Child streams are seeded with splitmix64(seed ^ (stream * golden ratio)),
/// which depends only on the parent's seed, never on its position.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0, v = 0.0, s = 0.0;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = (0 - n) % n;  // 2^64 mod n
    std::uint64_t x = 0;
    do {
      x = engine_();
    } while (x < limit);
    return x % n;
  }

  Rng split(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ (stream * 0x9E3779B97F4A7C15ULL)));
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fscil
