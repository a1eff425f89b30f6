#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "x2f/decoder/model.hpp"
#include "x2f/io/formats.hpp"

namespace x2f::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

// Every run-time setting. Config keys use underscores, flags use hyphens
// (edge_ckpt <-> --edge-ckpt).
struct Settings {
  std::string config;
  std::string data;
  std::string val;
  std::string out;
  std::string edge_ckpt;
  std::string ckpt;
  std::string report;
  std::string log;
  std::string pred;
  std::string dump;
  std::string flo;
  std::uint64_t seed = 1;
  std::size_t n = 64;
  std::vector<std::string> degrade;
  std::string variant = "full";
  std::vector<std::string> variants{"full", "no-reg", "no-ees", "indep", "joint-ccl"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t jobs = 1;
  std::uint64_t fps_seed = 0;
  double val_fraction = 0.25;
  dec::TrainConfig train;
  dec::PretrainConfig pretrain;
};

// Sets one key from its text value; `where` prefixes error messages.
void apply_setting(Settings& s, const std::string& key, const std::string& value, const std::string& where);
std::vector<std::string> setting_keys();

// key=value lines, "#" starts a comment. Unknown keys and malformed lines
// raise ConfigError naming the line number.
void apply_config_text(Settings& s, const std::string& text, const std::string& origin);

// Middlebury color wheel; returns rgb interleaved, H * W * 3.
std::vector<std::uint8_t> viz_flow(const io::Flow2D& flow);

// Full command line without the program name. Errors are reported on `err`
// as one line; the return value is the exit code.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace x2f::cli
