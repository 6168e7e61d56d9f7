#pragma once

#include <cstdint>
#include <random>

namespace tsp {

// mt19937_64 with explicit uniform/normal mappings so that sampled streams
// are pinned by this code rather than by the standard library's distribution
// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(eng_() % span);
  }

  // Standard normal via Box-Muller; two uniforms per draw, no cached value.
  double normal();

  // Derives a child seed for an independent stream (splitmix64 finalizer).
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

 private:
  std::mt19937_64 eng_;
};

}  // namespace tsp
