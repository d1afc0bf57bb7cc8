#pragma once

#include <cstdint>
#include <vector>

namespace toolgym {

// Deterministic splitmix64 generator. The whole sequence is specified by
// this file (no standard-library distributions), so a seed produces the
// same draws on every platform and toolchain.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). Lemire multiply-shift; bias is at most n / 2^64.
  uint64_t bounded(uint64_t n) {
    if (n <= 1) return 0;
    return static_cast<uint64_t>(
        (static_cast<__uint128_t>(next()) * n) >> 64);
  }

  // Uniform in [0, 1), 53 bits of mantissa.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Inclusive integer range draw.
  int range(int lo, int hi) {
    if (hi <= lo) return lo;
    return lo + static_cast<int>(bounded(static_cast<uint64_t>(hi - lo) + 1));
  }

  // Fisher-Yates, high-to-low, j = bounded(i + 1).
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(bounded(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent stream derived from a base seed and a stream label.
  static Rng fork(uint64_t base, uint64_t stream) {
    return Rng(mix(base, stream));
  }

  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  uint64_t state_;
};

}  // namespace toolgym
