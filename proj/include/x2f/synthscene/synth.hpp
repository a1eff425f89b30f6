#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "x2f/encoders/encoders.hpp"
#include "x2f/eventdom/events.hpp"

namespace x2f::synth {

enum class ShapeKind { kRect, kDisk };

// A fronto-parallel textured plate translating at constant velocity.
// Extents and texture cells are in meters on the plate.
struct ObjectSpec {
  ShapeKind shape = ShapeKind::kRect;
  enc::Vec3 center{0.0, 0.0, 4.0};  // at t0
  enc::Vec3 velocity{0.0, 0.0, 0.0};
  double half_w = 0.5;  // rect half width, or disk radius
  double half_h = 0.5;
  double cell = 0.25;   // checker cell size
  double phase_x = 0.0;
  double phase_y = 0.0;
  double bright = 0.9;
  double dark = 0.4;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  enc::CameraModel camera;
  std::vector<ObjectSpec> objects;
  double dt = 0.1;
  std::size_t substeps = 10;
  double contrast = 0.15;
  std::size_t n_points = 256;

  // Throws ConfigError if an object leaves the frame, overlaps another
  // object's swept footprint, or the parameters are out of range.
  void validate() const;
};

inline constexpr double kBackground = 0.2;
inline constexpr double kGroundY = 1.0;
inline constexpr double kGroundZMin = 3.0;
inline constexpr double kGroundZMax = 8.0;
inline constexpr double kLogFloor = 1e-3;

// Draws a valid spec from the seed (1-4 objects, depth 2-6 m, 0-3.5 px motion).
SceneSpec random_spec(std::uint64_t seed, const enc::CameraModel& cam = {});

struct Degradation {
  std::string kind;
  int severity = 0;
};

struct Sample {
  std::uint64_t seed = 0;
  enc::CameraModel camera;
  std::vector<double> img0;  // H*W in [0, 1], 8-bit quantized
  std::vector<double> img1;
  events::EventStream events;
  enc::Points points0;
  enc::Points points1;
  std::vector<double> flow2d;  // H*W*2 interleaved (u, v), float32-representable
  enc::Points flow3d;          // per points0 row
  std::vector<Degradation> degradations;
};

// Continuous render at time t (seconds from t0), object pixels labelled by
// object index (or -1) at pixel centers.
std::vector<double> render(const SceneSpec& spec, double t, std::vector<int>* labels = nullptr);

Sample generate_sample(const SceneSpec& spec);
// Sample i is drawn from random_spec(derive_seed(seed, 100 + i)).
std::vector<Sample> generate_dataset(std::uint64_t seed, std::size_t n, const enc::CameraModel& cam = {});

// Brightness-change events from R + 1 substep frames spanning [t_start, t_end).
events::EventStream simulate_events(const std::vector<std::vector<double>>& frames, std::size_t height,
                                    std::size_t width, double t_start, double t_end, double contrast);

// kind in {low-exposure, high-exposure, sparse-lidar, drift-lidar}; severity 1-3.
Sample degrade(const Sample& s, const std::string& kind, int severity);

// Directory layout: img0.pgm, img1.pgm, events.csv, points0.csv, points1.csv,
// flow2d_gt.flo, flow3d_gt.csv, manifest.json.
void write_sample(const std::filesystem::path& dir, const Sample& s);
Sample read_sample(const std::filesystem::path& dir);

// Dataset index "index.txt": one sample directory (relative) per line.
void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples);
std::vector<std::filesystem::path> read_index(const std::filesystem::path& root);

}  // namespace x2f::synth
