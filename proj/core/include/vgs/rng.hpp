#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace vgs {

/// Deterministic random number generator with a fixed, documented algorithm.
///
/// The stream is xoshiro256**; the four words of state are expanded from the
/// 64-bit seed with splitmix64. Floating point draws use the top 53 bits of
/// each output word, normal draws use the Box-Muller transform (two uniforms
/// per draw, none cached), and bounded integers use modulo reduction. None of
/// these depend on libc or libstdc++ distribution internals, so a given seed
/// produces the same stream on every platform.
///
/// All derived generators trace back to a single root seed: derive() hashes a
/// label (FNV-1a 64) and an optional index into the *original* seed of this
/// generator, so derivation is independent of how much of the stream has been
/// consumed.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  /// Gaussian via Box-Muller; consumes exactly two uniforms.
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, bound); bound must be nonzero.
  std::uint64_t below(std::uint64_t bound);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Child generator seeded from (root seed, label, index).
  Rng derive(std::string_view label, std::uint64_t index = 0) const;

private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
};

}  // namespace vgs
