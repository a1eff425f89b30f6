#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "x2f/autodiff/tensor.hpp"

// Differentiable operations. Feature maps are channel-first: (C, H, W) for
// 2D grids and (C, D, H, W) for space-time volumes. Point sets are row-major
// (N, C).
namespace x2f::ad::ops {

// Elementwise; operands must share a shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);

// (M, K) x (K, N); transpose flags apply to the stored operands.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};
// x (Cin, H, W), weight (Cout, Cin/groups, kh, kw), bias (Cout) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dParams& p = {});

struct Conv3dParams {
  std::array<std::size_t, 3> stride{1, 1, 1};  // (time, row, col)
  std::array<std::size_t, 3> pad{0, 0, 0};
};
// x (Cin, D, H, W), weight (Cout, Cin, kd, kh, kw), bias (Cout) or undefined.
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv3dParams& p = {});

// x (N, in), weight (out, in), bias (out) or undefined -> (N, out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
// Values outside [lo, hi] are clamped and pass no gradient.
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor softmax(const Tensor& x, std::size_t axis);

// Reductions along one axis (the axis is removed).
Tensor abs_sum(const Tensor& x, std::size_t axis);
Tensor l2_norm(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x, std::size_t axis);
// Full reductions to rank 0.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over the listed axes (removed from the result).
Tensor mean(const Tensor& x, std::vector<std::size_t> axes);

// Average pooling over (C, H, W); padded cells are excluded from the count.
Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad = 0);

// (C, H, W) -> (2C, H, W): forward differences along columns then rows;
// the last column/row difference is zero.
Tensor spatial_gradient(const Tensor& x);

Tensor concat(std::span<const Tensor> xs, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> xs, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);
// Rank-2 transpose.
Tensor transpose(const Tensor& x);
// Numpy-style broadcast to `shape`.
Tensor broadcast(const Tensor& x, Shape shape);

// Forward identity; contributes nothing to its input on the reverse pass.
Tensor stop_gradient(const Tensor& x);

// grid (C, H, W), coords (N, 2) as (col, row) in cell units with integer
// values at cell centers. Out-of-range coordinates clamp to the border.
// Returns (N, C). Differentiable in both grid and coords.
Tensor bilinear_sample(const Tensor& grid, const Tensor& coords);

// values (N, C); cell[i] in [0, cells) or -1 to drop. Returns (cells, C);
// cells with no contributions are zero.
Tensor scatter_mean(const Tensor& values, std::span<const long> cell, std::size_t cells);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// Sparse row mixing: out[r] = sum_j w * x[src] over entries (src, w) of row r.
using RowMix = std::vector<std::vector<std::pair<std::size_t, double>>>;
Tensor mix_rows(const Tensor& x, const RowMix& mix);

// (C, H, W) -> (C, 2H, 2W), half-pixel centers, border clamped.
Tensor upsample2x_bilinear(const Tensor& x);

}  // namespace x2f::ad::ops
