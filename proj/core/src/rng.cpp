#include "bnnfi/rng.hpp"

#include "bnnfi/error.hpp"

namespace bnnfi {

uint64_t SplitMix64::uniform_below(uint64_t bound) {
  if (bound == 0) raise(Errc::invalid_argument, "uniform_below: bound must be positive");
  // Reject the tail of the 64-bit range that does not divide evenly.
  const uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
  uint64_t x;
  do {
    x = next();
  } while (x > limit);
  return x % bound;
}

uint64_t mix64(uint64_t x) {
  uint64_t z = x + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

uint64_t trial_seed(uint64_t master_seed, uint64_t scenario_id, uint64_t trial_index) {
  return mix64(mix64(master_seed ^ mix64(scenario_id)) ^ trial_index);
}

}  // namespace bnnfi
