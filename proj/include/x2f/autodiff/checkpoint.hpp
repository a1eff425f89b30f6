#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "x2f/autodiff/params.hpp"

namespace x2f::ad {

// Little-endian container: "X2F1", u32 entry count, then per entry
// u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f64 payload.
std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params);
ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const ParamStore& params);
ParamStore read_checkpoint(const std::filesystem::path& path);

}  // namespace x2f::ad
