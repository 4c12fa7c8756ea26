#pragma once

#include <cstdint>

namespace fmdp {

// Splittable seeded pseudorandom stream based on splitmix64
// (Steele, Lea & Flood 2014). The algorithm is fixed so that traces are
// reproducible across builds and platforms:
//
//   state' = state + 0x9E3779B97F4A7C15
//   z = state'; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB; output = z ^ (z >> 31)
//
// child(key) derives an independent stream without advancing the parent:
// its state is mix(parent_state ^ (0x9E3779B97F4A7C15 * (key + 1))).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return next_double() < p; }

  // Uniform in {0, ..., bound-1} by masked rejection.
  std::uint32_t next_below(std::uint32_t bound) {
    if (bound <= 1) return 0;
    std::uint32_t mask = bound - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    for (;;) {
      std::uint32_t v = static_cast<std::uint32_t>(next_u64() >> 32) & mask;
      if (v < bound) return v;
    }
  }

  // Uniform real in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  RngStream child(std::uint64_t key) const {
    return RngStream(mix(state_ ^ (kGamma * (key + 1))));
  }

  std::uint64_t state() const { return state_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace fmdp
