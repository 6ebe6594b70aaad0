#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace edif {

// xorshift64* stream seeded through splitmix64, so seed 0 is usable.
// Used for weight initialization; the exact sequence is part of the
// golden-value contract and must not change.
class XorShift64 {
 public:
  explicit XorShift64(std::uint64_t seed) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    state_ = z ^ (z >> 31);
    if (state_ == 0) state_ = 0x2545F4914F6CDD1Dull;
  }

  std::uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1Dull;
  }

  // Uniform on (0, 1], 53-bit resolution.
  double uniform() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

// Box-Muller over XorShift64. Each pair of uniforms yields two normals,
// cosine branch first.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = rng_.uniform();
    const double u2 = rng_.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  XorShift64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace edif
