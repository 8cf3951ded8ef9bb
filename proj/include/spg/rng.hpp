#pragma once

/**
 * Deterministic, splittable random streams.
 *
 * Every stochastic component takes an explicit Rng. Child streams are derived
 * by hashing the stream's base key with caller-chosen labels, so a result
 * never depends on evaluation order or thread schedule: rollout j, inner
 * update k and Monte Carlo sample tau each own a stream addressed by those
 * indices. Output is reproducible bit-for-bit for a given seed.
 *
 * Generator is xoshiro256++ seeded through splitmix64. Floating-point draws
 * are built from raw bits directly (no std::uniform_real_distribution), so
 * streams are stable across standard-library implementations.
 */

#include <cstdint>
#include <cmath>

namespace spg {

/// splitmix64 finalizer; used for seed expansion and stream derivation.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(seed) {
    uint64_t s = seed;
    for (auto& word : state_) {
      s += 0x9e3779b97f4a7c15ull;
      word = mix64(s);
    }
    // xoshiro must not start in the all-zero state
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[3] = 1;
  }

  /// Child stream addressed by a label path. Derivation uses the base key,
  /// not the current state, so children are schedule-independent.
  template <class... Ids>
  Rng child(Ids... ids) const {
    uint64_t k = key_;
    ((k = mix64(k ^ mix64(static_cast<uint64_t>(ids) + 0x100ull))), ...);
    return Rng(k);
  }

  uint64_t next() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1]. Used for mask-ratio draws where t = 0 is excluded.
  double uniform_pos() { return 1.0 - uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
  uint64_t uniform_int(uint64_t n) {
    if (n <= 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next();
    while (x >= limit) x = next();
    return x % n;
  }

  /// Standard normal via Box-Muller; two uniforms per call, spare discarded.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t key_;
  uint64_t state_[4];
};

}  // namespace spg
