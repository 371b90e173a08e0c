#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace fedqot {

// splitmix64 (Vigna's fixed-increment variant of SplittableRandom).
// Every seeded stream in this project goes through this generator so that
// runs are reproducible across platforms and implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) from the top 53 bits.
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound). bound must be nonzero.
  uint64_t next_below(uint64_t bound) { return next() % bound; }

 private:
  uint64_t state_;
};

// In-place Fisher-Yates shuffle driven by a SplitMix64 stream.
template <typename T>
void fisher_yates_shuffle(std::vector<T>& v, SplitMix64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace fedqot
