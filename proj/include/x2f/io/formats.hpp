#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "x2f/encoders/encoders.hpp"

namespace x2f::io {

struct Gray8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

// Binary PGM (P5), maxval 255.
void write_pgm(const std::filesystem::path& path, const Gray8& img);
Gray8 read_pgm(const std::filesystem::path& path);

// Dense 2D flow, interleaved (u, v) per pixel, row-major.
struct Flow2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> uv;
};

inline constexpr float kFloMagic = 202021.25f;

// Middlebury .flo: float32 magic, int32 width, int32 height, float32 (u, v) pairs, little-endian.
std::vector<std::uint8_t> encode_flo(const Flow2D& flow);
Flow2D decode_flo(const std::vector<std::uint8_t>& bytes);
void write_flo(const std::filesystem::path& path, const Flow2D& flow);
Flow2D read_flo(const std::filesystem::path& path);

// Binary PPM (P6), rgb interleaved.
void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb);

// CSV of three columns with the given header, e.g. "x,y,z".
void write_xyz_csv(const std::filesystem::path& path, const std::string& header, const enc::Points& rows);
enc::Points read_xyz_csv(const std::filesystem::path& path, const std::string& header);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace x2f::io
