#pragma once

#include <cstdint>

namespace wz {

// Finalizer from the splitmix64 construction. Pinned: changing any constant
// changes every generated corpus and every initial weight.
inline std::uint64_t splitmix_mix(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

// Deterministic counter-based generator with independent streams.
//
// State and outputs are defined exactly as:
//   state0  = splitmix_mix(seed ^ 0x243F6A8885A308D3) ^
//             splitmix_mix(stream ^ 0x13198A2E03707344)
//   next()  : state += 0x9E3779B97F4A7C15; return splitmix_mix(state)
//   uniform(): (next() >> 11) * 2^-53   (double in [0, 1))
//
// Streams with distinct ids start at state offsets that differ by a mixed
// (effectively random) 64-bit value, so two streams are shifted copies of the
// same counter sequence with an offset that is never small. Overlap within
// any realistic draw budget has probability ~ n^2 / 2^64.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed, std::uint64_t stream = 0)
      : state_(splitmix_mix(seed ^ 0x243F6A8885A308D3ull) ^
               splitmix_mix(stream ^ 0x13198A2E03707344ull)) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    return splitmix_mix(state_);
  }

  // Uniform double in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive. The floor(u * n) map has bias
  // below 2^-53 * n, negligible for the ranges used here.
  long uniform_int(long lo, long hi) {
    long n = hi - lo + 1;
    long k = static_cast<long>(uniform() * static_cast<double>(n));
    if (k >= n) k = n - 1;
    return lo + k;
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

inline SplitMix64 seeded_rng(std::uint64_t seed, std::uint64_t stream_id) {
  return SplitMix64(seed, stream_id);
}

}  // namespace wz
