#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace x2f::ad {

// Seeded generator shared by initialization, sampling and data synthesis.
// Engine: std::mt19937_64 (reference sequence fixed by the C++ standard).
// uniform(): top 53 bits of one draw scaled by 2^-53, in [0, 1).
// normal(): Box-Muller, cosine branch only, two uniforms per draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Uniform index in [0, n) by rejection; n > 0.
  std::size_t index(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from (seed, stream id) via splitmix64.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace x2f::ad
