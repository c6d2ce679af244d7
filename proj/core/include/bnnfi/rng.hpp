#pragma once

#include <cstdint>
#include <string_view>

namespace bnnfi {

// SplitMix64 stream generator (Steele, Lea, Flood; public domain reference
// implementation). Chosen over std::mt19937 + std::uniform_int_distribution
// because the standard distributions are not bit-reproducible across library
// implementations, and campaign replay requires identical streams everywhere.
class SplitMix64 {
public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Unbiased integer in [0, bound) via rejection sampling.
  uint64_t uniform_below(uint64_t bound);

  // Uniform double in [0, 1) with 53 random bits.
  double next_double() { return double(next() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

private:
  uint64_t state_;
};

// One SplitMix64 step used as a 64-bit avalanche hash. This is the fixed
// mixing function behind per-trial substreams: identical inputs produce
// identical streams on every platform, so campaigns parallelize and replay
// deterministically.
uint64_t mix64(uint64_t x);

// FNV-1a over a byte string; used to derive scenario ids from scenario keys.
uint64_t fnv1a64(std::string_view s);

// Per-trial seed: mix64(mix64(master_seed ^ mix64(scenario_id)) ^ trial_index).
uint64_t trial_seed(uint64_t master_seed, uint64_t scenario_id, uint64_t trial_index);

}  // namespace bnnfi
