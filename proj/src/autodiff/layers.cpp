#include "x2f/autodiff/layers.hpp"

#include "x2f/error.hpp"

namespace x2f::ad {

void add_conv2d(ParamStore& ps, Rng& rng, const std::string& name, std::size_t cout, std::size_t cin,
                std::size_t k, std::size_t groups) {
  if (groups == 0 || cin % groups || cout % groups) {
    throw ShapeError("conv2d " + name + ": channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                     " not divisible by " + std::to_string(groups) + " groups");
  }
  const std::size_t cg = cin / groups;
  const std::size_t fan_in = cg * k * k;
  ps.add(name + ".w", {cout, cg, k, k}, uniform_init(rng, cout * fan_in, fan_in));
  ps.add(name + ".b", {cout}, std::vector<double>(cout, 0.0));
}

void add_conv3d(ParamStore& ps, Rng& rng, const std::string& name, std::size_t cout, std::size_t cin,
                std::size_t k) {
  const std::size_t fan_in = cin * k * k * k;
  ps.add(name + ".w", {cout, cin, k, k, k}, uniform_init(rng, cout * fan_in, fan_in));
  ps.add(name + ".b", {cout}, std::vector<double>(cout, 0.0));
}

void add_linear(ParamStore& ps, Rng& rng, const std::string& name, std::size_t out, std::size_t in) {
  ps.add(name + ".w", {out, in}, uniform_init(rng, out * in, in));
  ps.add(name + ".b", {out}, std::vector<double>(out, 0.0));
}

Tensor conv2d_layer(const ParamStore& ps, const std::string& name, const Tensor& x,
                    const ops::Conv2dParams& p) {
  return ops::conv2d(x, ps.get(name + ".w"), ps.get(name + ".b"), p);
}

Tensor conv3d_layer(const ParamStore& ps, const std::string& name, const Tensor& x,
                    const ops::Conv3dParams& p) {
  return ops::conv3d(x, ps.get(name + ".w"), ps.get(name + ".b"), p);
}

Tensor linear_layer(const ParamStore& ps, const std::string& name, const Tensor& x) {
  return ops::linear(x, ps.get(name + ".w"), ps.get(name + ".b"));
}

Tensor grid_to_rows(const Tensor& grid) {
  if (grid.rank() != 3) throw ShapeError("grid_to_rows: expected (C, H, W), got " + to_string(grid.shape()));
  return ops::transpose(ops::reshape(grid, {grid.dim(0), grid.dim(1) * grid.dim(2)}));
}

Tensor rows_to_grid(const Tensor& rows, std::size_t height, std::size_t width) {
  if (rows.rank() != 2 || rows.dim(0) != height * width) {
    throw ShapeError("rows_to_grid: rows " + to_string(rows.shape()) + " do not cover " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  return ops::reshape(ops::transpose(rows), {rows.dim(1), height, width});
}

}  // namespace x2f::ad
