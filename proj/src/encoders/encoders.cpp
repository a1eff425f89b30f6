#include "x2f/encoders/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "x2f/autodiff/layers.hpp"
#include "x2f/error.hpp"

namespace x2f::enc {

namespace o = ad::ops;

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera: focal lengths must be positive");
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw ConfigError("camera: principal point must be finite");
  if (height == 0 || width == 0) throw ConfigError("camera: extent is zero");
}

std::array<double, 2> CameraModel::project(const Vec3& p) const {
  return {fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy};
}

ScaleProjection project_points(const Points& pts, const CameraModel& cam, std::size_t scale) {
  cam.validate();
  const std::size_t stride = scale_stride(scale);
  if (cam.height % stride || cam.width % stride) {
    throw ShapeError("project_points: extent " + std::to_string(cam.height) + "x" + std::to_string(cam.width) +
                     " not divisible by stride " + std::to_string(stride));
  }
  ScaleProjection out;
  out.height = cam.height / stride;
  out.width = cam.width / stride;
  out.cell.assign(pts.size(), -1);
  std::vector<double> coords(2 * pts.size());
  const double inv = 1.0 / static_cast<double>(stride);
  std::vector<bool> occupied(out.height * out.width, false);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3& p = pts[i];
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw ConfigError("project_points: point " + std::to_string(i) + " is not finite");
    }
    if (!(p[2] > 0.0)) {
      throw ConfigError("project_points: point " + std::to_string(i) + " has z = " + std::to_string(p[2]) +
                        " (behind the camera)");
    }
    const auto [u, v] = cam.project(p);
    coords[2 * i] = u * inv - 0.5;
    coords[2 * i + 1] = v * inv - 0.5;
    if (u >= 0.0 && v >= 0.0 && u < static_cast<double>(cam.width) && v < static_cast<double>(cam.height)) {
      const auto col = std::min(static_cast<std::size_t>(u * inv), out.width - 1);
      const auto row = std::min(static_cast<std::size_t>(v * inv), out.height - 1);
      out.cell[i] = static_cast<long>(row * out.width + col);
      occupied[row * out.width + col] = true;
    }
  }
  out.coords = ad::Tensor::constant({pts.size(), 2}, std::move(coords));

  std::vector<std::size_t> occ;
  for (std::size_t c = 0; c < occupied.size(); ++c)
    if (occupied[c]) occ.push_back(c);
  out.fill.resize(occupied.size());
  if (occ.empty()) return out;  // all rows empty -> zero grid
  std::vector<std::pair<double, std::size_t>> cand(occ.size());
  for (std::size_t c = 0; c < occupied.size(); ++c) {
    if (occupied[c]) {
      out.fill[c] = {{c, 1.0}};
      continue;
    }
    const double r = static_cast<double>(c / out.width), q = static_cast<double>(c % out.width);
    for (std::size_t j = 0; j < occ.size(); ++j) {
      const double dr = static_cast<double>(occ[j] / out.width) - r;
      const double dq = static_cast<double>(occ[j] % out.width) - q;
      cand[j] = {dr * dr + dq * dq, occ[j]};
    }
    const std::size_t k = std::min(kFillNeighbors, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k), cand.end());
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += 1.0 / std::sqrt(cand[j].first);
    for (std::size_t j = 0; j < k; ++j) {
      out.fill[c].push_back({cand[j].second, 1.0 / std::sqrt(cand[j].first) / total});
    }
  }
  return out;
}

ad::Tensor lift_points_to_grid(const ad::Tensor& rows, const ScaleProjection& proj) {
  if (rows.rank() != 2 || rows.dim(0) != proj.cell.size()) {
    throw ShapeError("lift_points_to_grid: features " + ad::to_string(rows.shape()) + " vs " +
                     std::to_string(proj.cell.size()) + " points");
  }
  const std::size_t cells = proj.height * proj.width;
  const auto cellmean = o::scatter_mean(rows, proj.cell, cells);
  return ad::rows_to_grid(o::mix_rows(cellmean, proj.fill), proj.height, proj.width);
}

ad::Tensor lift_points_to_grid(const ad::Tensor& rows, const Points& pts, const CameraModel& cam,
                               std::size_t scale) {
  return lift_points_to_grid(rows, project_points(pts, cam, scale));
}

ad::Tensor sample_grid_at_points(const ad::Tensor& grid, const ScaleProjection& proj) {
  if (grid.rank() != 3 || grid.dim(1) != proj.height || grid.dim(2) != proj.width) {
    throw ShapeError("sample_grid_at_points: grid " + ad::to_string(grid.shape()) + " vs projection " +
                     std::to_string(proj.height) + "x" + std::to_string(proj.width));
  }
  return o::bilinear_sample(grid, proj.coords);
}

ad::Tensor sample_grid_at_points(const ad::Tensor& grid, const Points& pts, const CameraModel& cam,
                                 std::size_t scale) {
  return sample_grid_at_points(grid, project_points(pts, cam, scale));
}

std::vector<double> sample_edge_at_points(const events::EdgeMap& e, const ScaleProjection& proj) {
  ad::NoGradGuard guard;
  const auto s = sample_grid_at_points(e.tensor(), proj);
  std::vector<double> out = s.to_vector();
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void init_image_encoder(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix) {
  std::size_t cin = 1;
  for (std::size_t s = 1; s <= kNumScales; ++s) {
    ad::add_conv2d(ps, rng, prefix + "conv" + std::to_string(s), kScaleChannels[s - 1], cin, 3);
    cin = kScaleChannels[s - 1];
  }
}

std::vector<ad::Tensor> image_encode(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& image) {
  const std::size_t total = scale_stride(kNumScales);
  if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) % total || image.dim(2) % total) {
    throw ShapeError("image_encode: expected (1, H, W) with H, W divisible by " + std::to_string(total) +
                     ", got " + ad::to_string(image.shape()));
  }
  o::Conv2dParams p;
  p.stride = 2;
  p.pad = 1;
  std::vector<ad::Tensor> pyramid;
  ad::Tensor x = image;
  for (std::size_t s = 1; s <= kNumScales; ++s) {
    x = o::relu(ad::conv2d_layer(ps, prefix + "conv" + std::to_string(s), x, p));
    pyramid.push_back(x);
  }
  return pyramid;
}

ad::Tensor lidar_descriptors(const Points& pts, double radius) {
  const std::size_t n = pts.size();
  std::vector<double> d(n * 6);
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = pts[i];
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = pts[j][0] - p[0], dy = pts[j][1] - p[1], dz = pts[j][2] - p[2];
      if (dx * dx + dy * dy + dz * dz <= r2) ++count;
    }
    double* row = d.data() + 6 * i;
    row[0] = p[0];
    row[1] = p[1];
    row[2] = p[2];
    row[3] = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    row[4] = p[2];
    row[5] = static_cast<double>(count);
  }
  return ad::Tensor::constant({n, 6}, std::move(d));
}

void init_lidar_encoder(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix) {
  ad::add_linear(ps, rng, prefix + "fc1", kLidarFeatures, 6);
  ad::add_linear(ps, rng, prefix + "fc2", kLidarFeatures, kLidarFeatures);
}

ad::Tensor lidar_encode(const ad::ParamStore& ps, const std::string& prefix, const Points& pts, double radius) {
  if (pts.size() < 8) throw ConfigError("lidar_encode: need at least 8 points, got " + std::to_string(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (double c : pts[i])
      if (!std::isfinite(c)) throw ConfigError("lidar_encode: point " + std::to_string(i) + " is not finite");
  }
  return lidar_encode(ps, prefix, lidar_descriptors(pts, radius));
}

ad::Tensor lidar_encode(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& descriptors) {
  if (descriptors.rank() != 2 || descriptors.dim(1) != 6 || descriptors.dim(0) < 8) {
    throw ConfigError("lidar_encode: expected (N >= 8, 6) descriptors, got " + ad::to_string(descriptors.shape()));
  }
  auto h = o::relu(ad::linear_layer(ps, prefix + "fc1", descriptors));
  return o::relu(ad::linear_layer(ps, prefix + "fc2", h));
}

void init_projection_heads(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix) {
  for (std::size_t s = 1; s <= kNumScales; ++s) {
    const std::size_t c = kScaleChannels[s - 1];
    ad::add_conv2d(ps, rng, prefix + "hi" + std::to_string(s), c, c, 1);
    ad::add_linear(ps, rng, prefix + "hl" + std::to_string(s), c, kLidarFeatures);
  }
}

ad::Tensor project_image(const ad::ParamStore& ps, const std::string& prefix, std::size_t scale,
                         const ad::Tensor& features) {
  return ad::conv2d_layer(ps, prefix + "hi" + std::to_string(scale), features);
}

ad::Tensor project_lidar(const ad::ParamStore& ps, const std::string& prefix, std::size_t scale,
                         const ad::Tensor& features) {
  return ad::linear_layer(ps, prefix + "hl" + std::to_string(scale), features);
}

}  // namespace x2f::enc
