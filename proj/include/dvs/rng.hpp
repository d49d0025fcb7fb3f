#pragma once

#include <cstdint>
#include <array>
#include <cmath>

namespace dvs {

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace detail

/// xoshiro256++ with explicit, platform-independent distributions. All
/// randomness in the project flows through this type so that results are
/// reproducible bit-for-bit from a seed on any standard library.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = detail::splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_index(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller (uses two uniforms per pair).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Guard the log against u1 == 0.
    u1 = u1 > 0 ? u1 : 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) {
    s_ = s;
    have_spare_ = false;
  }

 private:
  std::array<uint64_t, 4> s_{};
  double spare_ = 0;
  bool have_spare_ = false;
};

/// Derives an independent stream from a base seed and a tuple of integer
/// tags (e.g. (iteration, ray index)). Derivation is purely functional, so
/// parallel evaluation order can never change the draws a consumer sees.
inline Rng derive_rng(uint64_t seed, std::initializer_list<uint64_t> tags) {
  uint64_t h = seed ^ 0x2545f4914f6cdd1dULL;
  for (uint64_t t : tags) {
    h ^= t + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h = detail::splitmix64(h);
  }
  return Rng(h);
}

}  // namespace dvs
