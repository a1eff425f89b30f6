#pragma once

#include <cstddef>
#include <string>

#include "x2f/autodiff/ops.hpp"
#include "x2f/autodiff/params.hpp"
#include "x2f/autodiff/random.hpp"

// Parameter registration and application for the common layer shapes.
// A layer named "n" owns "n.w" and "n.b"; biases start at zero.
namespace x2f::ad {

void add_conv2d(ParamStore& ps, Rng& rng, const std::string& name, std::size_t cout, std::size_t cin,
                std::size_t k, std::size_t groups = 1);
void add_conv3d(ParamStore& ps, Rng& rng, const std::string& name, std::size_t cout, std::size_t cin,
                std::size_t k);
void add_linear(ParamStore& ps, Rng& rng, const std::string& name, std::size_t out, std::size_t in);

Tensor conv2d_layer(const ParamStore& ps, const std::string& name, const Tensor& x,
                    const ops::Conv2dParams& p = {});
Tensor conv3d_layer(const ParamStore& ps, const std::string& name, const Tensor& x,
                    const ops::Conv3dParams& p = {});
Tensor linear_layer(const ParamStore& ps, const std::string& name, const Tensor& x);

// (C, H, W) <-> (H*W, C) row layout.
Tensor grid_to_rows(const Tensor& grid);
Tensor rows_to_grid(const Tensor& rows, std::size_t height, std::size_t width);

}  // namespace x2f::ad
