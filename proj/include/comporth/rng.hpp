#pragma once

// Counter-based deterministic random numbers. Every value is a pure
// function of (seed, counter), so streams can be replayed or split
// without carrying generator state across modules.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace comporth {

// SplitMix64 finalizer applied to a keyed counter.
inline uint64_t hash_counter(uint64_t seed, uint64_t counter) {
  uint64_t z = seed + (counter + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class CounterRng {
 public:
  explicit CounterRng(uint64_t seed, uint64_t start = 0) : seed_(seed), counter_(start) {}

  uint64_t next_u64() { return hash_counter(seed_, counter_++); }

  // Uniform in (0,1]; never 0 so it is safe under log().
  double next_unit() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes two counter ticks.
  double next_normal() {
    const double u1 = next_unit();
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Unbiased integer in [0, n); n > 0.
  uint64_t next_below(uint64_t n) {
    const uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t counter() const { return counter_; }

 private:
  uint64_t seed_;
  uint64_t counter_;
};

}  // namespace comporth
