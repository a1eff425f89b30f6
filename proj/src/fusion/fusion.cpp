#include "x2f/fusion/fusion.hpp"

#include <cmath>
#include <vector>

#include "x2f/autodiff/layers.hpp"
#include "x2f/autodiff/ops.hpp"
#include "x2f/error.hpp"

namespace x2f::fusion {

namespace o = ad::ops;

namespace {

void check_pair(const FramePair& p, const char* what) {
  if (!p.t0.defined() || !p.t1.defined()) {
    throw ShapeError(std::string("reliability_global: missing frame for ") + what);
  }
  if (p.t0.shape() != p.t1.shape() || p.t0.rank() != 3) {
    throw ShapeError(std::string("reliability_global: ") + what + " frames " + ad::to_string(p.t0.shape()) +
                     " vs " + ad::to_string(p.t1.shape()));
  }
}

// Replicates the border row/column on each side of (C, H, W).
ad::Tensor pad_replicate(const ad::Tensor& x) {
  const std::size_t h = x.dim(1), w = x.dim(2);
  auto rows = o::concat({o::slice(x, 1, 0, 1), x, o::slice(x, 1, h - 1, 1)}, 1);
  return o::concat({o::slice(rows, 2, 0, 1), rows, o::slice(rows, 2, w - 1, 1)}, 2);
}

}  // namespace

void init_global(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix, std::size_t channels) {
  ad::add_conv2d(ps, rng, prefix + "tconv", channels, 2 * channels, 3);
  ad::add_conv2d(ps, rng, prefix + "tlin", channels, channels, 1);
  ad::add_conv2d(ps, rng, prefix + "sconv", channels, 4 * channels, 3);
}

ad::Tensor global_logit(const ad::ParamStore& ps, const std::string& prefix, const FramePair& zm,
                        const FramePair& ze) {
  check_pair(zm, "modality");
  check_pair(ze, "event");
  if (zm.t0.shape() != ze.t0.shape()) {
    throw ShapeError("reliability_global: modality " + ad::to_string(zm.t0.shape()) + " vs event " +
                     ad::to_string(ze.t0.shape()));
  }
  o::Conv2dParams same;
  same.pad = 1;
  const auto c0 = ad::conv2d_layer(ps, prefix + "tconv", o::concat({zm.t0, ze.t0}, 0), same);
  const auto c1 = ad::conv2d_layer(ps, prefix + "tconv", o::concat({zm.t1, ze.t1}, 0), same);
  const auto t = o::sigmoid(ad::conv2d_layer(ps, prefix + "tlin", o::sub(c1, c0)));

  o::Conv2dParams dil;
  dil.pad = 2;
  dil.dilation = 2;
  const auto zhat = o::concat({zm.t0, zm.t1, ze.t0, ze.t1}, 0);
  const auto grad = o::spatial_gradient(ad::conv2d_layer(ps, prefix + "sconv", zhat, dil));
  const auto s = o::l2_norm(grad, 0);
  return o::mean(o::mul(t, o::broadcast(o::reshape(s, {1, s.dim(0), s.dim(1)}), t.shape())));
}

ad::Tensor reliability_global(const ad::ParamStore& ps, const std::string& prefix, const FramePair& zi,
                              const FramePair& zl, const FramePair& ze) {
  const auto li = o::reshape(global_logit(ps, prefix, zi, ze), {1});
  const auto ll = o::reshape(global_logit(ps, prefix, zl, ze), {1});
  return o::softmax(o::concat({li, ll}, 0), 0);
}

ad::Tensor with_event_anchor(const ad::Tensor& omega) {
  if (omega.shape() != ad::Shape{2}) throw ShapeError("with_event_anchor: expected (2), got " + ad::to_string(omega.shape()));
  return o::concat({omega, ad::Tensor::constant({1}, {1.0})}, 0);
}

ad::Tensor laplacian(const ad::Tensor& x) {
  if (x.rank() != 3) throw ShapeError("laplacian: expected (C, H, W), got " + ad::to_string(x.shape()));
  const std::size_t c = x.dim(0);
  std::vector<double> k(c * 9);
  for (std::size_t i = 0; i < c; ++i) {
    const double stencil[9] = {0, 1, 0, 1, -4, 1, 0, 1, 0};
    std::copy(stencil, stencil + 9, k.begin() + static_cast<long>(9 * i));
  }
  o::Conv2dParams p;
  p.groups = c;
  return o::conv2d(pad_replicate(x), ad::Tensor::constant({c, 1, 3, 3}, std::move(k)), ad::Tensor(), p);
}

void init_local(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix, std::size_t channels) {
  ad::add_conv2d(ps, rng, prefix + "grp", 3, 3 * channels, 1, 3);
  ad::add_conv2d(ps, rng, prefix + "out", 3, 6 * channels + 3, 1);
}

ad::Tensor local_logits(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& zcat) {
  if (zcat.rank() != 3 || zcat.dim(0) % 3) {
    throw ShapeError("reliability_local: channel count of " + ad::to_string(zcat.shape()) +
                     " not divisible by 3 groups");
  }
  o::Conv2dParams grouped;
  grouped.groups = 3;
  const auto h = laplacian(zcat);
  const auto p = o::avg_pool2d(zcat, 3, 1, 1);
  const auto g = ad::conv2d_layer(ps, prefix + "grp", zcat, grouped);
  return ad::conv2d_layer(ps, prefix + "out", o::concat({h, p, g}, 0));
}

ad::Tensor reliability_local(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& zi,
                             const ad::Tensor& zl, const ad::Tensor& ze) {
  if (zi.shape() != zl.shape() || zi.shape() != ze.shape()) {
    throw ShapeError("reliability_local: embeddings " + ad::to_string(zi.shape()) + ", " +
                     ad::to_string(zl.shape()) + ", " + ad::to_string(ze.shape()) + " differ");
  }
  return o::softmax(local_logits(ps, prefix, o::concat({zi, zl, ze}, 0)), 0);
}

ad::Tensor fusion_weights(const ad::Tensor& omega, const ad::Tensor& a) {
  if (omega.shape() != ad::Shape{3} || a.rank() != 2 || a.dim(1) != 3) {
    throw ShapeError("adaptive_fuse: omega " + ad::to_string(omega.shape()) + ", A " + ad::to_string(a.shape()));
  }
  const std::size_t n = a.dim(0);
  const auto wa = o::mul(a, o::broadcast(o::reshape(omega, {1, 3}), {n, 3}));
  const auto denom = o::sum(wa, 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(denom[i] >= 1e-12)) {
      throw NumericError("adaptive_fuse: weight denominator " + std::to_string(denom[i]) + " at location " +
                         std::to_string(i));
    }
  }
  return o::div(wa, o::broadcast(o::reshape(denom, {n, 1}), {n, 3}));
}

ad::Tensor adaptive_fuse(const std::array<ad::Tensor, 3>& z, const ad::Tensor& omega, const ad::Tensor& a) {
  const auto w = fusion_weights(omega, a);
  const std::size_t n = w.dim(0);
  ad::Tensor out;
  for (std::size_t m = 0; m < 3; ++m) {
    if (z[m].rank() != 2 || z[m].dim(0) != n || z[m].shape() != z[0].shape()) {
      throw ShapeError("adaptive_fuse: modality " + std::to_string(m) + " rows " + ad::to_string(z[m].shape()) +
                       " vs " + std::to_string(n) + " locations");
    }
    const auto term = o::mul(o::broadcast(o::slice(w, 1, m, 1), z[m].shape()), z[m]);
    out = out.defined() ? o::add(out, term) : term;
  }
  return out;
}

void init_attention(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix, std::size_t channels) {
  ad::add_linear(ps, rng, prefix + "q", channels, channels);
  ad::add_linear(ps, rng, prefix + "k", channels, channels);
  ad::add_linear(ps, rng, prefix + "v", channels, channels);
  ad::add_linear(ps, rng, prefix + "mlp1", 2 * channels, channels);
  ad::add_linear(ps, rng, prefix + "mlp2", channels, 2 * channels);
}

ad::Tensor attention_weights(const ad::Tensor& q, const ad::Tensor& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw ShapeError("cross_attention: d mismatch, Q " + ad::to_string(q.shape()) + " vs K " +
                     ad::to_string(k.shape()));
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return o::softmax(o::scale(o::matmul(q, k, false, true), inv), 1);
}

ad::Tensor cross_attention(const ad::ParamStore& ps, const std::string& prefix, const ad::Tensor& fused,
                           const ad::Tensor& aux) {
  const auto q = ad::linear_layer(ps, prefix + "q", fused);
  const auto k = ad::linear_layer(ps, prefix + "k", aux);
  const auto v = ad::linear_layer(ps, prefix + "v", aux);
  const auto att = o::matmul(attention_weights(q, k), v);
  const auto mlp = ad::linear_layer(ps, prefix + "mlp2", o::relu(ad::linear_layer(ps, prefix + "mlp1", att)));
  return o::add(mlp, fused);
}

}  // namespace x2f::fusion
