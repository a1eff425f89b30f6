#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "x2f/autodiff/ops.hpp"
#include "x2f/autodiff/params.hpp"
#include "x2f/autodiff/random.hpp"
#include "x2f/common.hpp"
#include "x2f/encoders/encoders.hpp"

// Coarse-to-fine flow decoders and the training objective. 2D flows are
// (2, H_l, W_l) grids in level-l pixel units (channel 0 = u rightward); 3D
// flows are (N_l, 3) rows in meters. Pyramid index 0 is the finest level.
namespace x2f::dec {

// lambda_align and lambda_contra put each auxiliary term at about 15% of
// L_task at initialization on the synthetic training set.
struct LossWeights {
  double lambda_align = 6e-4;
  double lambda_contra = 0.013;
  double lambda_2d = 1.0;
  double lambda_3d = 1.0;
  std::array<double, kNumScales> omega{0.32, 0.08, 0.02};
  void validate() const;
};

inline constexpr std::size_t kHeadHidden = 32;
inline constexpr double kHeadOutputScale = 0.1;

// Per-level heads "h{l}a", "h{l}b": 3x3 convs (2C + 2 -> 32 -> 2).
void init_decoder2d(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix);
// Constant (a, b) -> (2a, 2b) at twice the extent.
ad::Tensor upsample_flow(const ad::Tensor& flow);
// Bilinear read of x (C, H, W) at (col + u, row + v), border clamped.
ad::Tensor warp2d(const ad::Tensor& x, const ad::Tensor& flow);
std::vector<ad::Tensor> decode_flow2d(const ad::ParamStore& ps, const std::string& prefix,
                                      const std::vector<ad::Tensor>& fout, const std::vector<ad::Tensor>& frame2);

// Greedy farthest-point order of `count` indices; the start index comes from
// the seed, ties go to the lower index.
std::vector<std::size_t> farthest_point_sampling(const enc::Points& pts, std::size_t count, std::uint64_t seed);

// Rows of `to` as inverse-distance mixes of the k nearest rows of `from`.
// A coincident neighbor takes the full weight.
ad::ops::RowMix knn_mix(const enc::Points& from, const enc::Points& to, std::size_t k = 3);

// Nested levels (N, N/2, N/4): level 0 keeps the cloud order, coarser levels
// are FPS prefixes. up[l] maps level l + 1 rows onto level l points.
struct PointPyramid {
  std::array<std::vector<std::size_t>, kNumScales> index;
  std::array<enc::Points, kNumScales> points;
  std::array<ad::ops::RowMix, kNumScales - 1> up;
};
PointPyramid build_point_pyramid(const enc::Points& pts, std::uint64_t seed);

// Per-level heads "h{l}a", "h{l}b": linear (2C + 3 -> 32 -> 3).
void init_decoder3d(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix);
// fout[l], frame2[l]: level-l rows of the t0 and t1 clouds.
std::vector<ad::Tensor> decode_flow3d(const ad::ParamStore& ps, const std::string& prefix,
                                      const std::vector<ad::Tensor>& fout, const PointPyramid& pyr0,
                                      const std::vector<ad::Tensor>& frame2, const PointPyramid& pyr1);

// Level-l targets: average pool by 2^(l+1), values scaled by 2^-(l+1).
std::vector<ad::Tensor> gt_pyramid2d(const ad::Tensor& flow);
std::vector<ad::Tensor> gt_pyramid3d(const ad::Tensor& flow, const PointPyramid& pyr);
// Finest level (H/2, W/2) back to full resolution in full-resolution pixels.
ad::Tensor full_resolution(const ad::Tensor& finest);

// Empty pyramids mark a branch that is not supervised.
struct FlowPyramids {
  std::vector<ad::Tensor> flow2d;
  std::vector<ad::Tensor> flow3d;
};
// sum over branches of lambda * sum_l omega_l * mean_x |pred - gt|_2
ad::Tensor task_loss(const FlowPyramids& pred, const FlowPyramids& gt, const LossWeights& w);
// Undefined align/contra terms count as zero.
ad::Tensor total_loss(const ad::Tensor& task, const ad::Tensor& align, const ad::Tensor& contra,
                      const LossWeights& w);

}  // namespace x2f::dec
