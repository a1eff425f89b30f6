#include "x2f/io/formats.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "x2f/error.hpp"

namespace x2f::io {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

void write_pgm(const std::filesystem::path& path, const Gray8& img) {
  if (img.pixels.size() != img.height * img.width) throw FormatError("write_pgm: pixel count mismatch");
  std::string head = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
  write_bytes(path, bytes);
}

Gray8 read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) {
    return FormatError(path.string() + ": " + why + " at byte " + std::to_string(pos));
  };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw fail("expected integer");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("bad magic, expected P5");
  pos = 2;
  Gray8 img;
  img.width = number();
  img.height = number();
  if (number() != 255) throw fail("maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("missing header terminator");
  ++pos;
  if (bytes.size() - pos != img.width * img.height) throw fail("payload size mismatch");
  img.pixels.assign(bytes.begin() + static_cast<long>(pos), bytes.end());
  return img;
}

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t& pos, const char* what) {
  if (in.size() - pos < sizeof(T) || pos > in.size()) {
    throw FormatError(std::string("flo: truncated ") + what + " at byte offset " + std::to_string(pos));
  }
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_flo(const Flow2D& flow) {
  if (flow.uv.size() != 2 * flow.height * flow.width) throw FormatError("write_flo: payload size mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(12 + 4 * flow.uv.size());
  put(out, kFloMagic);
  put(out, static_cast<std::int32_t>(flow.width));
  put(out, static_cast<std::int32_t>(flow.height));
  for (float v : flow.uv) put(out, v);
  return out;
}

Flow2D decode_flo(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  const float magic = get<float>(bytes, pos, "magic");
  if (magic != kFloMagic) throw FormatError("flo: bad magic at byte offset 0");
  const auto w = get<std::int32_t>(bytes, pos, "width");
  const auto h = get<std::int32_t>(bytes, pos, "height");
  if (w <= 0 || h <= 0) throw FormatError("flo: non-positive extent at byte offset 4");
  Flow2D f;
  f.width = static_cast<std::size_t>(w);
  f.height = static_cast<std::size_t>(h);
  const std::size_t n = 2 * f.width * f.height;
  if (bytes.size() - pos < 4 * n) {
    throw FormatError("flo: truncated payload at byte offset " + std::to_string(pos + 4 * ((bytes.size() - pos) / 4)));
  }
  if (bytes.size() - pos > 4 * n) throw FormatError("flo: trailing bytes at byte offset " + std::to_string(pos + 4 * n));
  f.uv.resize(n);
  std::memcpy(f.uv.data(), bytes.data() + pos, 4 * n);
  return f;
}

void write_flo(const std::filesystem::path& path, const Flow2D& flow) { write_bytes(path, encode_flo(flow)); }

Flow2D read_flo(const std::filesystem::path& path) {
  try {
    return decode_flo(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_ppm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != 3 * height * width) throw FormatError("write_ppm: pixel count mismatch");
  std::string head = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  bytes.insert(bytes.end(), rgb.begin(), rgb.end());
  write_bytes(path, bytes);
}

void write_xyz_csv(const std::filesystem::path& path, const std::string& header, const enc::Points& rows) {
  std::string text = header + "\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", r[0], r[1], r[2]);
    text += buf;
  }
  write_text(path, text);
}

enc::Points read_xyz_csv(const std::filesystem::path& path, const std::string& header) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line) || line != header) {
    throw FormatError(path.string() + ":1: expected header \"" + header + "\"");
  }
  enc::Points rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    enc::Vec3 v{};
    const char* p = line.data();
    const char* end = p + line.size();
    for (int k = 0; k < 3; ++k) {
      auto r = std::from_chars(p, end, v[k]);
      const bool last = k == 2;
      if (r.ec != std::errc() || (last ? r.ptr != end : (r.ptr == end || *r.ptr != ','))) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
      }
      p = r.ptr + 1;
    }
    rows.push_back(v);
  }
  return rows;
}

}  // namespace x2f::io
