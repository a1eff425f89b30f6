#pragma once

#include <array>
#include <cstddef>

namespace x2f {

inline constexpr std::size_t kNumScales = 3;
// Channels C_s of the shared embedding at scales s = 1, 2, 3 (strides 2, 4, 8).
inline constexpr std::array<std::size_t, kNumScales> kScaleChannels{16, 24, 32};

inline constexpr std::size_t scale_stride(std::size_t scale) { return std::size_t{1} << scale; }

}  // namespace x2f
