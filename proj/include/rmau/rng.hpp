#pragma once

// Portable pseudo-random streams.
//
// The standard <random> distributions are implementation-defined, so every
// draw that has to reproduce across platforms goes through the helpers here:
//
//   SplitMix64   state += 0x9E3779B97F4A7C15; z = state;
//                z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//                z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//                return z ^ (z >> 31)
//   Xoshiro256** seeded with four consecutive SplitMix64 outputs.
//   uniform()    (next() >> 11) * 2^-53, in [0, 1)
//   below(n)     next() % n
//   normal()     Box-Muller on two uniforms, cosine branch only

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>

namespace rmau {

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Xoshiro256(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& s : s_) s = sm.next();
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() { return next(); }

  constexpr std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n) { return next() % n; }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> s_{};
};

/// Derives an independent stream seed from a base seed and a path of keys,
/// e.g. (seed, epoch, sample index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = SplitMix64(seed).next();
  for (std::uint64_t k : keys) h = SplitMix64(h ^ (k * 0xD1342543DE82EF95ULL + 1)).next();
  return h;
}

/// In-place Fisher-Yates: for i = n-1 down to 1, swap(v[i], v[below(i+1)]).
template <class Range>
void fisher_yates(Range& values, Xoshiro256& rng) {
  const auto n = static_cast<std::uint64_t>(values.size());
  if (n < 2) return;
  for (std::uint64_t i = n - 1; i > 0; --i) {
    const std::uint64_t j = rng.below(i + 1);
    using std::swap;
    swap(values[i], values[j]);
  }
}

}  // namespace rmau
