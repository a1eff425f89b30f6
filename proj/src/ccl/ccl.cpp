#include "x2f/ccl/ccl.hpp"

#include <vector>

#include "x2f/autodiff/layers.hpp"
#include "x2f/autodiff/ops.hpp"
#include "x2f/error.hpp"

namespace x2f::ccl {

namespace o = ad::ops;

ad::Tensor global_pool(const ad::Tensor& x) {
  if (x.rank() == 3) return o::mean(x, {1, 2});
  if (x.rank() == 2) return o::mean(x, {0});
  throw ShapeError("global_pool: expected (C, H, W) or (N, C), got " + ad::to_string(x.shape()));
}

ad::Tensor motion_vector(const ad::Tensor& f0, const ad::Tensor& f1) {
  if (f0.shape() != f1.shape()) {
    throw ShapeError("motion_vectors: frame extents " + ad::to_string(f0.shape()) + " vs " + ad::to_string(f1.shape()));
  }
  return global_pool(o::sub(f1, f0));
}

MotionVectors motion_vectors(const ad::Tensor& f2d_t0, const ad::Tensor& f2d_t1, const ad::Tensor& f3d_t0,
                             const ad::Tensor& f3d_t1, const enc::ScaleProjection& proj_t0,
                             const enc::ScaleProjection& proj_t1) {
  const auto p0 = enc::lift_points_to_grid(f3d_t0, proj_t0);
  const auto p1 = enc::lift_points_to_grid(f3d_t1, proj_t1);
  if (p0.shape() != f2d_t0.shape()) {
    throw ShapeError("motion_vectors: lifted 3D features " + ad::to_string(p0.shape()) + " vs 2D " +
                     ad::to_string(f2d_t0.shape()));
  }
  return {motion_vector(f2d_t0, f2d_t1), motion_vector(p0, p1)};
}

void init_ccl(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix, std::size_t channels) {
  for (const char* name : {"phi", "psi", "mu2d", "sig2d", "mu3d", "sig3d"}) {
    ad::add_linear(ps, rng, prefix + name, kLatentDim, channels);
  }
}

ad::Tensor cosine_pull(const ad::Tensor& a, const ad::Tensor& b) {
  if (a.rank() != 1 || a.shape() != b.shape()) {
    throw ShapeError("pull_loss: vectors " + ad::to_string(a.shape()) + " vs " + ad::to_string(b.shape()));
  }
  const std::size_t n = a.dim(0);
  const auto dot = o::sum(o::mul(a, b));
  const auto na = o::add_scalar(o::l2_norm(o::reshape(a, {1, n}), 1), kPullEps);
  const auto nb = o::add_scalar(o::l2_norm(o::reshape(b, {1, n}), 1), kPullEps);
  const auto denom = o::reshape(o::mul(na, nb), {});
  return o::add_scalar(o::neg(o::div(dot, denom)), 1.0);
}

namespace {

ad::Tensor apply_vec(const ad::ParamStore& ps, const std::string& name, const ad::Tensor& v) {
  const auto out = ad::linear_layer(ps, name, o::reshape(v, {1, v.numel()}));
  return o::reshape(out, {out.numel()});
}

}  // namespace

ad::Tensor pull_loss(const ad::ParamStore& ps, const std::string& prefix, const MotionVectors& m) {
  return cosine_pull(apply_vec(ps, prefix + "phi", m.m2d), apply_vec(ps, prefix + "psi", m.m3d));
}

LatentDist reparameterize(const ad::Tensor& mu, const ad::Tensor& pre_sigma, ad::Rng& rng) {
  if (mu.shape() != pre_sigma.shape()) {
    throw ShapeError("variational_encode: mu " + ad::to_string(mu.shape()) + " vs sigma " +
                     ad::to_string(pre_sigma.shape()));
  }
  std::vector<double> eps(mu.numel());
  for (double& e : eps) e = rng.normal();
  const auto sigma = o::softplus(pre_sigma);
  const auto z = o::add(mu, o::mul(sigma, ad::Tensor::constant(mu.shape(), std::move(eps))));
  return {mu, sigma, z};
}

LatentDist variational_encode(const ad::ParamStore& ps, const std::string& prefix, const std::string& branch,
                              const ad::Tensor& features, ad::Rng& rng) {
  if (branch != "2d" && branch != "3d") throw ConfigError("variational_encode: unknown branch '" + branch + "'");
  const auto pooled = global_pool(features);
  return reparameterize(apply_vec(ps, prefix + "mu" + branch, pooled), apply_vec(ps, prefix + "sig" + branch, pooled),
                        rng);
}

ad::Tensor bce_term(const ad::Tensor& z2d, const ad::Tensor& z3d) {
  if (z2d.shape() != z3d.shape()) {
    throw ShapeError("push_loss: latents " + ad::to_string(z2d.shape()) + " vs " + ad::to_string(z3d.shape()));
  }
  const auto p = o::clamp(o::sigmoid(z2d), kProbClamp, 1.0 - kProbClamp);
  const auto q = o::stop_gradient(o::clamp(o::sigmoid(z3d), kProbClamp, 1.0 - kProbClamp));
  const auto one_minus = [](const ad::Tensor& t) { return o::add_scalar(o::neg(t), 1.0); };
  const auto ll = o::add(o::mul(q, o::log(p)), o::mul(one_minus(q), o::log(one_minus(p))));
  return o::neg(o::mean(ll));
}

ad::Tensor push_loss(const std::array<ad::Tensor, 2>& z2d, const std::array<ad::Tensor, 2>& z3d) {
  return o::scale(o::add(bce_term(z2d[0], z3d[0]), bce_term(z2d[1], z3d[1])), 0.5);
}

ad::Tensor contra_loss(const ad::Tensor& pull, const ad::Tensor& push, double gamma, double push_sign) {
  if (!(gamma >= 0.0)) throw ConfigError("contra_loss: gamma must be >= 0");
  return o::add(pull, o::scale(push, push_sign * gamma));
}

}  // namespace x2f::ccl
