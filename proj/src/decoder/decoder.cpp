#include "x2f/decoder/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "x2f/autodiff/layers.hpp"
#include "x2f/error.hpp"

namespace x2f::dec {

namespace o = ad::ops;

namespace {

std::string level_name(const std::string& prefix, std::size_t l, const char* part) {
  return prefix + "h" + std::to_string(l + 1) + part;
}

ad::Tensor flow_head2d(const ad::ParamStore& ps, const std::string& prefix, std::size_t l, const ad::Tensor& x) {
  o::Conv2dParams same;
  same.pad = 1;
  const auto h = o::relu(ad::conv2d_layer(ps, level_name(prefix, l, "a"), x, same));
  return ad::conv2d_layer(ps, level_name(prefix, l, "b"), h, same);
}

ad::Tensor flow_head3d(const ad::ParamStore& ps, const std::string& prefix, std::size_t l, const ad::Tensor& x) {
  const auto h = o::relu(ad::linear_layer(ps, level_name(prefix, l, "a"), x));
  return ad::linear_layer(ps, level_name(prefix, l, "b"), h);
}

// Small output layers so the initial flow is near zero rather than several
// times the typical ground-truth magnitude.
void shrink(ad::ParamStore& ps, const std::string& name) {
  auto v = ps.get(name).to_vector();
  for (double& x : v) x *= kHeadOutputScale;
  ps.assign(name, v);
}

double dist2(const enc::Vec3& a, const enc::Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

ad::Tensor level_mean_epe(const ad::Tensor& pred, const ad::Tensor& gt, std::size_t axis) {
  return o::mean(o::l2_norm(o::sub(pred, gt), axis));
}

}  // namespace

void LossWeights::validate() const {
  const bool ok = lambda_align >= 0.0 && lambda_contra >= 0.0 && lambda_2d >= 0.0 && lambda_3d >= 0.0 &&
                  std::all_of(omega.begin(), omega.end(), [](double v) { return v >= 0.0; });
  if (!ok) throw ConfigError("loss weights must all be >= 0");
}

void init_decoder2d(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix) {
  for (std::size_t l = 0; l < kNumScales; ++l) {
    const std::size_t c = kScaleChannels[l];
    ad::add_conv2d(ps, rng, level_name(prefix, l, "a"), kHeadHidden, 2 * c + 2, 3);
    ad::add_conv2d(ps, rng, level_name(prefix, l, "b"), 2, kHeadHidden, 3);
    shrink(ps, level_name(prefix, l, "b") + ".w");
  }
}

ad::Tensor upsample_flow(const ad::Tensor& flow) { return o::scale(o::upsample2x_bilinear(flow), 2.0); }

ad::Tensor warp2d(const ad::Tensor& x, const ad::Tensor& flow) {
  if (x.rank() != 3 || flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) != x.dim(1) || flow.dim(2) != x.dim(2)) {
    throw ShapeError("decode_flow2d: cannot warp " + ad::to_string(x.shape()) + " by flow " +
                     ad::to_string(flow.shape()));
  }
  const std::size_t h = x.dim(1), w = x.dim(2);
  std::vector<double> base(h * w * 2);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      base[2 * (i * w + j)] = static_cast<double>(j);
      base[2 * (i * w + j) + 1] = static_cast<double>(i);
    }
  const auto coords = o::add(ad::Tensor::constant({h * w, 2}, std::move(base)), ad::grid_to_rows(flow));
  return ad::rows_to_grid(o::bilinear_sample(x, coords), h, w);
}

std::vector<ad::Tensor> decode_flow2d(const ad::ParamStore& ps, const std::string& prefix,
                                      const std::vector<ad::Tensor>& fout, const std::vector<ad::Tensor>& frame2) {
  if (fout.size() != kNumScales || frame2.size() != kNumScales) {
    throw ShapeError("decode_flow2d: expected " + std::to_string(kNumScales) + " levels, got " +
                     std::to_string(fout.size()) + " and " + std::to_string(frame2.size()));
  }
  for (std::size_t l = 0; l < kNumScales; ++l) {
    if (fout[l].rank() != 3 || fout[l].shape() != frame2[l].shape()) {
      throw ShapeError("decode_flow2d: level " + std::to_string(l) + " extent " + ad::to_string(fout[l].shape()) +
                       " vs frame-2 " + ad::to_string(frame2[l].shape()));
    }
    if (l > 0 && (fout[l].dim(1) * 2 != fout[l - 1].dim(1) || fout[l].dim(2) * 2 != fout[l - 1].dim(2))) {
      throw ShapeError("decode_flow2d: level " + std::to_string(l) + " extent " + ad::to_string(fout[l].shape()) +
                       " is not half of " + ad::to_string(fout[l - 1].shape()));
    }
  }
  std::vector<ad::Tensor> flows(kNumScales);
  for (std::size_t l = kNumScales; l-- > 0;) {
    const std::size_t h = fout[l].dim(1), w = fout[l].dim(2);
    ad::Tensor up, warped;
    if (l + 1 == kNumScales) {
      up = ad::Tensor::zeros({2, h, w});
      warped = frame2[l];
    } else {
      up = upsample_flow(flows[l + 1]);
      warped = warp2d(frame2[l], up);
    }
    flows[l] = o::add(up, flow_head2d(ps, prefix, l, o::concat({fout[l], warped, up}, 0)));
  }
  return flows;
}

std::vector<std::size_t> farthest_point_sampling(const enc::Points& pts, std::size_t count, std::uint64_t seed) {
  const std::size_t n = pts.size();
  if (count > n || n == 0) {
    throw ConfigError("farthest_point_sampling: cannot take " + std::to_string(count) + " of " + std::to_string(n) +
                      " points");
  }
  std::vector<std::size_t> order;
  if (count == 0) return order;
  ad::Rng rng(seed);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::size_t cur = rng.index(n);
  for (std::size_t k = 0; k < count; ++k) {
    order.push_back(cur);
    best[cur] = -1.0;
    std::size_t next = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (best[i] < 0.0) continue;
      best[i] = std::min(best[i], dist2(pts[i], pts[cur]));
      if (best[i] > far) {
        far = best[i];
        next = i;
      }
    }
    cur = next;
  }
  return order;
}

ad::ops::RowMix knn_mix(const enc::Points& from, const enc::Points& to, std::size_t k) {
  if (from.empty()) throw ConfigError("knn_mix: no source points");
  const std::size_t kk = std::min(k, from.size());
  ad::ops::RowMix mix(to.size());
  std::vector<std::pair<double, std::size_t>> cand(from.size());
  for (std::size_t i = 0; i < to.size(); ++i) {
    for (std::size_t j = 0; j < from.size(); ++j) cand[j] = {dist2(to[i], from[j]), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(kk), cand.end());
    if (cand[0].first == 0.0) {
      mix[i] = {{cand[0].second, 1.0}};
      continue;
    }
    double total = 0.0;
    for (std::size_t q = 0; q < kk; ++q) total += 1.0 / std::sqrt(cand[q].first);
    for (std::size_t q = 0; q < kk; ++q) mix[i].push_back({cand[q].second, 1.0 / std::sqrt(cand[q].first) / total});
  }
  return mix;
}

PointPyramid build_point_pyramid(const enc::Points& pts, std::uint64_t seed) {
  const std::size_t n = pts.size();
  if (n / 4 < 4) throw ConfigError("decode_flow3d: coarsest level needs >= 4 points, cloud has " + std::to_string(n));
  const auto order = farthest_point_sampling(pts, n / 2, seed);
  PointPyramid pyr;
  pyr.index[0].resize(n);
  std::iota(pyr.index[0].begin(), pyr.index[0].end(), std::size_t{0});
  for (std::size_t l = 1; l < kNumScales; ++l) {
    pyr.index[l].assign(order.begin(), order.begin() + static_cast<long>(n >> l));
  }
  for (std::size_t l = 0; l < kNumScales; ++l) {
    for (std::size_t i : pyr.index[l]) pyr.points[l].push_back(pts[i]);
  }
  for (std::size_t l = 0; l + 1 < kNumScales; ++l) pyr.up[l] = knn_mix(pyr.points[l + 1], pyr.points[l]);
  return pyr;
}

void init_decoder3d(ad::ParamStore& ps, ad::Rng& rng, const std::string& prefix) {
  for (std::size_t l = 0; l < kNumScales; ++l) {
    const std::size_t c = kScaleChannels[l];
    ad::add_linear(ps, rng, level_name(prefix, l, "a"), kHeadHidden, 2 * c + 3);
    ad::add_linear(ps, rng, level_name(prefix, l, "b"), 3, kHeadHidden);
    shrink(ps, level_name(prefix, l, "b") + ".w");
  }
}

std::vector<ad::Tensor> decode_flow3d(const ad::ParamStore& ps, const std::string& prefix,
                                      const std::vector<ad::Tensor>& fout, const PointPyramid& pyr0,
                                      const std::vector<ad::Tensor>& frame2, const PointPyramid& pyr1) {
  if (fout.size() != kNumScales || frame2.size() != kNumScales) {
    throw ShapeError("decode_flow3d: expected " + std::to_string(kNumScales) + " levels");
  }
  for (std::size_t l = 0; l < kNumScales; ++l) {
    if (fout[l].rank() != 2 || fout[l].dim(0) != pyr0.points[l].size() || frame2[l].rank() != 2 ||
        frame2[l].dim(0) != pyr1.points[l].size() || frame2[l].dim(1) != fout[l].dim(1)) {
      throw ShapeError("decode_flow3d: level " + std::to_string(l) + " features " + ad::to_string(fout[l].shape()) +
                       " / " + ad::to_string(frame2[l].shape()) + " vs point pyramid");
    }
  }
  std::vector<ad::Tensor> flows(kNumScales);
  for (std::size_t l = kNumScales; l-- > 0;) {
    const auto& pts = pyr0.points[l];
    ad::Tensor up;
    enc::Points target = pts;
    if (l + 1 == kNumScales) {
      up = ad::Tensor::zeros({pts.size(), 3});
    } else {
      up = o::mix_rows(flows[l + 1], pyr0.up[l]);
      const auto shift = o::stop_gradient(up);
      for (std::size_t i = 0; i < target.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) target[i][c] += shift[3 * i + c];
    }
    const auto warped = o::mix_rows(frame2[l], knn_mix(pyr1.points[l], target));
    flows[l] = o::add(up, flow_head3d(ps, prefix, l, o::concat({fout[l], warped, up}, 1)));
  }
  return flows;
}

std::vector<ad::Tensor> gt_pyramid2d(const ad::Tensor& flow) {
  const std::size_t total = scale_stride(kNumScales);
  if (flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) % total || flow.dim(2) % total) {
    throw ShapeError("task_loss: 2D ground truth " + ad::to_string(flow.shape()) + " is not (2, H, W) with H, W divisible by " +
                     std::to_string(total));
  }
  std::vector<ad::Tensor> out;
  for (std::size_t s = 1; s <= kNumScales; ++s) {
    const std::size_t k = scale_stride(s);
    out.push_back(o::scale(o::avg_pool2d(flow, k, k), 1.0 / static_cast<double>(k)));
  }
  return out;
}

std::vector<ad::Tensor> gt_pyramid3d(const ad::Tensor& flow, const PointPyramid& pyr) {
  if (flow.rank() != 2 || flow.dim(1) != 3 || flow.dim(0) != pyr.points[0].size()) {
    throw ShapeError("task_loss: 3D ground truth " + ad::to_string(flow.shape()) + " vs " +
                     std::to_string(pyr.points[0].size()) + " points");
  }
  std::vector<ad::Tensor> out;
  for (std::size_t l = 0; l < kNumScales; ++l) out.push_back(o::gather_rows(flow, pyr.index[l]));
  return out;
}

ad::Tensor full_resolution(const ad::Tensor& finest) { return upsample_flow(finest); }

ad::Tensor task_loss(const FlowPyramids& pred, const FlowPyramids& gt, const LossWeights& w) {
  w.validate();
  ad::Tensor total = ad::Tensor::scalar(0.0);
  const auto branch = [&](const std::vector<ad::Tensor>& p, const std::vector<ad::Tensor>& g, double lambda,
                          std::size_t axis, const char* name) {
    if (p.size() != g.size() || p.size() > kNumScales) {
      throw ShapeError(std::string("task_loss: ") + name + " pyramid has " + std::to_string(p.size()) +
                       " levels, ground truth " + std::to_string(g.size()));
    }
    for (std::size_t l = 0; l < p.size(); ++l) {
      if (p[l].shape() != g[l].shape()) {
        throw ShapeError(std::string("task_loss: ") + name + " level " + std::to_string(l) + " prediction " +
                         ad::to_string(p[l].shape()) + " vs ground truth " + ad::to_string(g[l].shape()));
      }
      total = o::add(total, o::scale(level_mean_epe(p[l], g[l], axis), lambda * w.omega[l]));
    }
  };
  branch(pred.flow2d, gt.flow2d, w.lambda_2d, 0, "2D");
  branch(pred.flow3d, gt.flow3d, w.lambda_3d, 1, "3D");
  return total;
}

ad::Tensor total_loss(const ad::Tensor& task, const ad::Tensor& align, const ad::Tensor& contra,
                      const LossWeights& w) {
  w.validate();
  ad::Tensor total = task;
  if (align.defined() && w.lambda_align != 0.0) total = o::add(total, o::scale(align, w.lambda_align));
  if (contra.defined() && w.lambda_contra != 0.0) total = o::add(total, o::scale(contra, w.lambda_contra));
  return total;
}

}  // namespace x2f::dec
