#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "x2f/autodiff/ops.hpp"
#include "x2f/autodiff/params.hpp"
#include "x2f/autodiff/random.hpp"
#include "x2f/common.hpp"
#include "x2f/eventdom/events.hpp"

namespace x2f::enc {

using Vec3 = std::array<double, 3>;
using Points = std::vector<Vec3>;

struct CameraModel {
  double fx = 32.0;
  double fy = 32.0;
  double cx = 16.0;
  double cy = 16.0;
  std::size_t height = 32;
  std::size_t width = 32;

  void validate() const;
  // Pixel coordinates (u, v); pixel j spans [j, j + 1). Requires z > 0.
  std::array<double, 2> project(const Vec3& p) const;
};

// Where a cloud lands on the scale-s grid: containing cell (-1 when outside
// the frame), bilinear sample coordinates, and the k-NN fill of empty cells.
struct ScaleProjection {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<long> cell;
  ad::Tensor coords;  // (N, 2) as (col, row), integer values at cell centers
  ad::ops::RowMix fill;
};

inline constexpr std::size_t kFillNeighbors = 3;

// Throws ConfigError for z <= 0 or non-finite positions.
ScaleProjection project_points(const Points& pts, const CameraModel& cam, std::size_t scale);

// (N, C) rows -> (C, H_s, W_s): scatter-mean into cells, then inverse-distance
// fill of empty cells from the k nearest occupied ones.
ad::Tensor lift_points_to_grid(const ad::Tensor& rows, const ScaleProjection& proj);
ad::Tensor lift_points_to_grid(const ad::Tensor& rows, const Points& pts, const CameraModel& cam,
                               std::size_t scale);

// Bilinear read of a (C, H_s, W_s) grid at the projected points -> (N, C).
ad::Tensor sample_grid_at_points(const ad::Tensor& grid, const ScaleProjection& proj);
ad::Tensor sample_grid_at_points(const ad::Tensor& grid, const Points& pts, const CameraModel& cam,
                                 std::size_t scale);
std::vector<double> sample_edge_at_points(const events::EdgeMap& e, const ScaleProjection& proj);

// Image backbone: three (conv3x3 stride 2, relu) stages; image (1, H, W).
void init_image_encoder(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix);
std::vector<ad::Tensor> image_encode(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& image);

inline constexpr std::size_t kLidarFeatures = 32;
inline constexpr double kDensityRadius = 0.5;

// (x, y, z, range, z-depth, neighbors within radius) -> (N, 6) constant.
ad::Tensor lidar_descriptors(const Points& pts, double radius = kDensityRadius);
void init_lidar_encoder(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix);
// Shared per-point MLP 6 -> 32 -> 32; requires N >= 8.
ad::Tensor lidar_encode(const ad::ParamStore& ps, const std::string& prefix, const Points& pts,
                        double radius = kDensityRadius);
// Same MLP on precomputed descriptors (N, 6).
ad::Tensor lidar_encode(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& descriptors);

// Projection heads into the shared space: "hi{s}" (1x1 conv) and "hl{s}" (linear).
void init_projection_heads(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix);
ad::Tensor project_image(const ad::ParamStore& ps, const std::string& prefix, std::size_t scale,
                         const ad::Tensor& features);
ad::Tensor project_lidar(const ad::ParamStore& ps, const std::string& prefix, std::size_t scale,
                         const ad::Tensor& features);

}  // namespace x2f::enc
