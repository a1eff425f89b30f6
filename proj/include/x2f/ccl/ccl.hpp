#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "x2f/autodiff/params.hpp"
#include "x2f/autodiff/random.hpp"
#include "x2f/autodiff/tensor.hpp"
#include "x2f/encoders/encoders.hpp"

namespace x2f::ccl {

inline constexpr std::size_t kLatentDim = 32;
inline constexpr double kPullEps = 1e-8;
inline constexpr double kProbClamp = 1e-7;

// Global average pool: (C, H, W) grids over space, (N, C) rows over points -> (C).
ad::Tensor global_pool(const ad::Tensor& x);

// GAP(F(t1) - F(t0)) -> (C).
ad::Tensor motion_vector(const ad::Tensor& f0, const ad::Tensor& f1);

struct MotionVectors {
  ad::Tensor m2d;
  ad::Tensor m3d;
};

// The 3D branch is lifted per frame onto the 2D grid before pooling.
MotionVectors motion_vectors(const ad::Tensor& f2d_t0, const ad::Tensor& f2d_t1, const ad::Tensor& f3d_t0,
                             const ad::Tensor& f3d_t1, const enc::ScaleProjection& proj_t0,
                             const enc::ScaleProjection& proj_t1);

// "phi", "psi" (C -> 32) and the variational heads "mu2d", "sig2d", "mu3d", "sig3d".
void init_ccl(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix, std::size_t channels);

// 1 - <a, b> / ((|a| + eps)(|b| + eps)) for vectors a, b of equal length.
ad::Tensor cosine_pull(const ad::Tensor& a, const ad::Tensor& b);
ad::Tensor pull_loss(const ad::ParamStore& ps, const std::string& prefix, const MotionVectors& m);

struct LatentDist {
  ad::Tensor mu;
  ad::Tensor sigma;
  ad::Tensor z;
};

// z = mu + sigma * eps with eps ~ N(0, 1) from `rng`; branch is "2d" or "3d".
LatentDist variational_encode(const ad::ParamStore& ps, const std::string& prefix, const std::string& branch,
                              const ad::Tensor& features, ad::Rng& rng);
LatentDist reparameterize(const ad::Tensor& mu, const ad::Tensor& pre_sigma, ad::Rng& rng);

// Mean over dims of BCE(sigmoid(z2d); stop_gradient(sigmoid(z3d))), clamped.
ad::Tensor bce_term(const ad::Tensor& z2d, const ad::Tensor& z3d);
// (1/2) sum over the two frames.
ad::Tensor push_loss(const std::array<ad::Tensor, 2>& z2d, const std::array<ad::Tensor, 2>& z3d);

// L_pull + push_sign * gamma * L_push.
ad::Tensor contra_loss(const ad::Tensor& pull, const ad::Tensor& push, double gamma = 0.5, double push_sign = 1.0);

}  // namespace x2f::ccl
