#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace postshock {

namespace detail {

// splitmix64 finalizer, used both to advance key-derivation state and to
// expand a key into generator state.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// Collapse a tuple of key parts into a single 64-bit sub-seed. Used to hand
/// child components (bootstrap runs, LOOCV iterations) their own seeds.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t state = 0x8f1bbcdcbfa53e0bULL;
  for (std::uint64_t p : parts) {
    state ^= p + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    state = detail::splitmix64(state);
  }
  return detail::splitmix64(state);
}

/// Deterministic random stream keyed by a tuple of 64-bit values
/// (seed, replicate, slot, ...). Each logical task derives its own stream
/// from its key, so serial and parallel execution consume identical draws.
///
/// The generator is xoshiro256++ with splitmix64 state expansion; the
/// samplers below are fixed implementations, so a (key, call sequence)
/// pair maps to the same numbers on every platform.
class Rng {
 public:
  explicit Rng(std::initializer_list<std::uint64_t> key) {
    std::uint64_t state = derive_seed(key);
    for (auto& word : state_) word = detail::splitmix64(state);
  }

  static Rng keyed(std::initializer_list<std::uint64_t> key) { return Rng(key); }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t threshold = (-n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    // log1p(-u1) is finite because u1 < 1
    const double radius = std::sqrt(-2.0 * std::log1p(-u1));
    const double angle = 2.0 * kPi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Exponential with given scale (mean).
  double exponential(double scale) { return -scale * std::log1p(-uniform01()); }

  /// Gamma(shape, scale) via Marsaglia-Tsang squeeze; shape < 1 handled by
  /// the boost trick, shape == 1 by the exponential shortcut.
  double gamma(double shape, double scale) {
    if (shape == 1.0) return exponential(scale);
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0, scale);
      const double u = uniform01();
      return g * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double z = normal();
      double v = 1.0 + c * z;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * z * z * z * z) return d * v * scale;
      if (u > 0.0 && std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) {
        return d * v * scale;
      }
    }
  }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace postshock
