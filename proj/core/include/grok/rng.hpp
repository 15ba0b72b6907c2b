#pragma once

#include <cstdint>

namespace grok {

/// SplitMix64: a counter-based 64-bit generator. Output i of a stream seeded
/// with `seed` is mix(seed + (i + 1) * 0x9E3779B97F4A7C15), so any language
/// with 64-bit unsigned arithmetic reproduces the same sequence.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();

  /// Uniform integer in [0, bound) by multiply-shift with rejection
  /// (Lemire). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform();

  /// Standard normal via Box-Muller; consumes two outputs per pair and
  /// caches the second value.
  double normal();

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derive an independent stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace grok
