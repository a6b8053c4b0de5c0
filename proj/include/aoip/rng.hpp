#pragma once

#include <cstdint>
#include <string_view>

namespace aoip {

// SplitMix64 (Steele/Lea/Vigna): the pinned pseudo-random generator for the
// whole simulator.  Pure 64-bit shift/multiply arithmetic, so sequences are
// bit-identical across platforms for a given seed.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

 private:
  std::uint64_t state_;
};

// FNV-1a over the label, folded with the base seed and scrambled once.
// Used to derive independent named streams (per direction, per node, per
// sweep cell) from one user-facing seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  SplitMix64 s(seed ^ h);
  return s.next();
}

}  // namespace aoip
