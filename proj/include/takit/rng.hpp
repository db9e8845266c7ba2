#pragma once

#include <cstdint>
#include <vector>

namespace takit::rng {

/// splitmix64 (Steele, Lea, Flood 2014). Used to expand user seeds into
/// full-entropy PCG32 stream seeds so that "seed 42" means the same byte
/// sequence on every platform.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// PCG32 (pcg32_random_r from the PCG reference implementation, O'Neill 2014):
/// 64-bit LCG state with multiplier 6364136223846793005 and an odd stream
/// increment, output = 32-bit XSH-RR permutation.
class Pcg32 {
 public:
  /// Seeds state and stream from splitmix64 expansions of `seed`.
  explicit Pcg32(uint64_t seed) {
    const uint64_t initstate = splitmix64(seed);
    const uint64_t initseq = splitmix64(initstate);
    state_ = 0u;
    inc_ = (initseq << 1u) | 1u;
    next_u32();
    state_ += initstate;
    next_u32();
  }

  uint32_t next_u32() {
    const uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    const uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  uint64_t next_u64() {
    const uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Unbiased integer in [0, bound) via rejection sampling.
  uint32_t bounded(uint32_t bound) {
    if (bound <= 1) return 0;
    const uint32_t threshold = (-bound) % bound;
    for (;;) {
      const uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

 private:
  uint64_t state_ = 0;
  uint64_t inc_ = 0;
};

/// Deterministic sample of `k` distinct indices from [0, n), drawn without
/// replacement by a partial Fisher-Yates shuffle. Order of the result is the
/// draw order.
inline std::vector<size_t> sample_without_replacement(size_t n, size_t k, Pcg32& rng) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  if (k > n) k = n;
  for (size_t i = 0; i < k; ++i) {
    const size_t j = i + rng.bounded(static_cast<uint32_t>(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace takit::rng
