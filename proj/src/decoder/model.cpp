#include "x2f/decoder/model.hpp"

#include <algorithm>
#include <cmath>

#include "x2f/autodiff/layers.hpp"
#include "x2f/ccl/ccl.hpp"
#include "x2f/error.hpp"
#include "x2f/fusion/fusion.hpp"

namespace x2f::dec {

namespace o = ad::ops;

namespace {

const std::string kEdgePrefix = "edge.";

struct VariantTraits {
  bool ees = true;
  bool align = true;
  bool ccl = true;
};

VariantTraits traits(Variant v) {
  switch (v) {
    case Variant::kNoEes: return {false, false, true};
    case Variant::kNoReg: return {true, false, true};
    case Variant::kIndep:
    case Variant::kJoint: return {true, true, false};
    default: return {};
  }
}

std::string sc(std::size_t s) { return std::to_string(s); }

void require_finite(const ad::Tensor& t, const char* module) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(module) + ": non-finite value in forward pass");
  }
}

using FramePyr = std::array<std::vector<ad::Tensor>, 2>;

}  // namespace

Variant parse_variant(const std::string& name) {
  const auto& names = variant_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Variant>(i);
  throw ConfigError("unknown variant '" + name + "'");
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"full", "no-ees", "no-reg", "no-edge", "indep", "joint", "joint-ccl"};
  return names;
}

std::string variant_name(Variant v) { return variant_names().at(static_cast<std::size_t>(v)); }

void ModelConfig::validate() const {
  weights.validate();
  align.validate();
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
}

std::vector<Head> heads_for(Variant v) {
  if (v == Variant::kIndep) return {{"m2d.", true, false}, {"m3d.", false, true}};
  return {{"", true, true}};
}

std::array<std::vector<ad::Tensor>, 2> frame_event_features(const synth::Sample& s, const events::EventEncoder& enc) {
  const auto [past, future] = events::split_window(s.events);
  std::array<std::vector<ad::Tensor>, 2> out{events::event_encode(events::voxelize(past), enc),
                                             events::event_encode(events::voxelize(future), enc)};
  for (auto& pyr : out)
    for (std::size_t k = 0; k < kNumScales; ++k) {
      const std::string name = "norm" + sc(k + 1);
      if (enc.params.contains(name)) pyr[k] = o::scale(pyr[k], 1.0 / enc.params.get(name).item());
    }
  return out;
}

SampleCache prepare_sample(const synth::Sample& s, const events::EventEncoder& enc, std::uint64_t fps_seed) {
  if (!enc.frozen) throw ConfigError("prepare_sample: the event encoder must be frozen");
  SampleCache c;
  c.camera = s.camera;
  const std::size_t h = s.camera.height, w = s.camera.width;
  c.image[0] = ad::Tensor::constant({1, h, w}, s.img0);
  c.image[1] = ad::Tensor::constant({1, h, w}, s.img1);
  c.points = {s.points0, s.points1};
  const auto ze = frame_event_features(s, enc);
  const auto [past, future] = events::split_window(s.events);
  const std::array<events::EdgeMap, 2> full{events::edge_strength(past), events::edge_strength(future)};
  for (std::size_t f = 0; f < 2; ++f) {
    c.lidar[f] = enc::lidar_descriptors(c.points[f]);
    for (std::size_t k = 0; k < kNumScales; ++k) {
      c.ze[f].push_back(ze[f][k].detach());
      c.edge[f].push_back(events::pool_edge(full[f], k + 1));
      c.proj[f].push_back(enc::project_points(c.points[f], c.camera, k + 1));
      c.edge_at_points[f].push_back(enc::sample_edge_at_points(c.edge[f][k], c.proj[f][k]));
    }
    c.pyramid[f] = build_point_pyramid(c.points[f], ad::derive_seed(fps_seed, f));
  }
  std::vector<double> uv(2 * h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    uv[i] = s.flow2d[2 * i];
    uv[h * w + i] = s.flow2d[2 * i + 1];
  }
  c.gt2d = ad::Tensor::constant({2, h, w}, std::move(uv));
  std::vector<double> f3;
  for (const auto& v : s.flow3d) f3.insert(f3.end(), v.begin(), v.end());
  c.gt3d = ad::Tensor::constant({s.flow3d.size(), 3}, std::move(f3));
  c.gt.flow2d = gt_pyramid2d(c.gt2d);
  c.gt.flow3d = gt_pyramid3d(c.gt3d, c.pyramid[0]);
  return c;
}

ad::ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto tr = traits(cfg.variant);
  ad::ParamStore ps;
  ad::Rng rng(ad::derive_seed(seed, 10));
  for (const Head& h : heads_for(cfg.variant)) {
    const std::string& p = h.prefix;
    enc::init_image_encoder(ps, rng, p + "img.");
    enc::init_lidar_encoder(ps, rng, p + "lid.");
    if (tr.ees) {
      enc::init_projection_heads(ps, rng, p + "proj.");
    } else {
      enc::init_projection_heads(ps, rng, p + "adp.");
      for (std::size_t s = 1; s <= kNumScales; ++s) {
        ad::add_conv2d(ps, rng, p + "adp.he" + sc(s), kScaleChannels[s - 1], kScaleChannels[s - 1], 1);
      }
    }
    for (std::size_t s = 1; s <= kNumScales; ++s) {
      const std::size_t c = kScaleChannels[s - 1];
      for (const auto& [on, tag] : {std::pair{h.branch2d, "f2d"}, std::pair{h.branch3d, "f3d"}}) {
        if (!on) continue;
        const std::string base = p + tag + sc(s);
        fusion::init_global(ps, rng, base + ".glob.", c);
        fusion::init_local(ps, rng, base + ".loc.", c);
        fusion::init_attention(ps, rng, base + ".att.", c);
      }
    }
    if (tr.ccl && h.branch2d && h.branch3d) ccl::init_ccl(ps, rng, p + "ccl.", kScaleChannels[kNumScales - 1]);
    if (h.branch2d) init_decoder2d(ps, rng, p + "dec2d.");
    if (h.branch3d) init_decoder3d(ps, rng, p + "dec3d.");
  }
  return ps;
}

namespace {

Losses forward_impl(const ModelConfig& cfg, const ad::ParamStore& ps, const SampleCache& c, const FramePyr& ze_in,
                    std::uint64_t noise_seed, bool with_losses) {
  const auto tr = traits(cfg.variant);
  const LossWeights& w = cfg.weights;
  ad::Rng noise(noise_seed);
  Losses out;
  ad::Tensor task, align_total, contra_total;
  const auto accumulate = [](ad::Tensor& acc, const ad::Tensor& t) { acc = acc.defined() ? o::add(acc, t) : t; };

  for (const Head& h : heads_for(cfg.variant)) {
    const std::string& p = h.prefix;
    FramePyr zi, zl, zlg, ze;
    for (std::size_t f = 0; f < 2; ++f) {
      require_finite(c.image[f], "encoders");
      require_finite(c.lidar[f], "encoders");
      const auto fi = enc::image_encode(ps, p + "img.", c.image[f]);
      const auto fl = enc::lidar_encode(ps, p + "lid.", c.lidar[f]);
      require_finite(fl, "encoders");
      const std::string head = tr.ees ? p + "proj." : p + "adp.";
      for (std::size_t k = 0; k < kNumScales; ++k) {
        require_finite(fi[k], "encoders");
        zi[f].push_back(enc::project_image(ps, head, k + 1, fi[k]));
        zl[f].push_back(enc::project_lidar(ps, head, k + 1, fl));
        ze[f].push_back(tr.ees ? ze_in[f][k] : ad::conv2d_layer(ps, p + "adp.he" + sc(k + 1), ze_in[f][k]));
        zlg[f].push_back(enc::lift_points_to_grid(zl[f][k], c.proj[f][k]));
      }
    }

    if (with_losses && tr.align && w.lambda_align > 0.0) {
      std::vector<align::WeightedField> f2, f3;
      for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t k = 0; k < kNumScales; ++k) {
          if (h.branch2d) {
            f2.push_back({align::pairwise_l1(ad::grid_to_rows(zi[f][k]), ad::grid_to_rows(ze[f][k]),
                                             ad::grid_to_rows(zlg[f][k])),
                          c.edge[f][k].values});
          }
          if (h.branch3d) {
            f3.push_back({align::pairwise_l1(enc::sample_grid_at_points(zi[f][k], c.proj[f][k]),
                                             enc::sample_grid_at_points(ze[f][k], c.proj[f][k]), zl[f][k]),
                          c.edge_at_points[f][k]});
          }
        }
      const auto a = o::scale(align::align_loss(f2, f3, cfg.align), 0.5);
      require_finite(a, "alignment");
      accumulate(align_total, a);
    }

    FramePyr f2d, f3d;
    for (std::size_t k = 0; k < kNumScales; ++k) {
      const std::size_t s = k + 1;
      const fusion::FramePair pi{zi[0][k], zi[1][k]}, pl{zlg[0][k], zlg[1][k]}, pe{ze[0][k], ze[1][k]};
      const std::size_t hs = zi[0][k].dim(1), ws = zi[0][k].dim(2);
      if (h.branch2d) {
        const std::string base = p + "f2d" + sc(s);
        const auto omega = fusion::with_event_anchor(fusion::reliability_global(ps, base + ".glob.", pi, pl, pe));
        for (std::size_t f = 0; f < 2; ++f) {
          const auto a = ad::grid_to_rows(fusion::reliability_local(ps, base + ".loc.", zi[f][k], zlg[f][k], ze[f][k]));
          const auto ri = ad::grid_to_rows(zi[f][k]), rl = ad::grid_to_rows(zlg[f][k]),
                     re = ad::grid_to_rows(ze[f][k]);
          const auto fused = fusion::adaptive_fuse({ri, rl, re}, omega, a);
          const auto fo = fusion::cross_attention(ps, base + ".att.", fused, o::concat({rl, re}, 0));
          require_finite(fo, "fusion");
          f2d[f].push_back(ad::rows_to_grid(fo, hs, ws));
        }
      }
      if (h.branch3d) {
        const std::string base = p + "f3d" + sc(s);
        const auto omega = fusion::with_event_anchor(fusion::reliability_global(ps, base + ".glob.", pi, pl, pe));
        for (std::size_t f = 0; f < 2; ++f) {
          const auto logits = fusion::local_logits(ps, base + ".loc.", o::concat({zi[f][k], zlg[f][k], ze[f][k]}, 0));
          const auto a = o::softmax(enc::sample_grid_at_points(logits, c.proj[f][k]), 1);
          const auto ri = enc::sample_grid_at_points(zi[f][k], c.proj[f][k]);
          const auto re = enc::sample_grid_at_points(ze[f][k], c.proj[f][k]);
          const auto fused = fusion::adaptive_fuse({ri, zl[f][k], re}, omega, a);
          const auto fo = fusion::cross_attention(ps, base + ".att.", fused, o::concat({ri, re}, 0));
          require_finite(fo, "fusion");
          f3d[f].push_back(fo);
        }
      }
    }

    if (with_losses && tr.ccl && h.branch2d && h.branch3d && w.lambda_contra > 0.0) {
      const std::size_t k = kNumScales - 1;
      const auto mv = ccl::motion_vectors(f2d[0][k], f2d[1][k], f3d[0][k], f3d[1][k], c.proj[0][k], c.proj[1][k]);
      const auto pull = ccl::pull_loss(ps, p + "ccl.", mv);
      std::array<ad::Tensor, 2> z2, z3;
      for (std::size_t f = 0; f < 2; ++f) {
        z2[f] = ccl::variational_encode(ps, p + "ccl.", "2d", f2d[f][k], noise).z;
        z3[f] = ccl::variational_encode(ps, p + "ccl.", "3d", f3d[f][k], noise).z;
      }
      const auto push = ccl::push_loss(z2, z3);
      const auto contra = ccl::contra_loss(pull, push, cfg.gamma);
      require_finite(contra, "ccl");
      accumulate(contra_total, contra);
      accumulate(out.pull, pull);
      accumulate(out.push, push);
    }

    FlowPyramids pred, gt;
    if (h.branch2d) {
      pred.flow2d = decode_flow2d(ps, p + "dec2d.", f2d[0], f2d[1]);
      gt.flow2d = c.gt.flow2d;
      out.pred.flow2d = pred.flow2d;
    }
    if (h.branch3d) {
      std::vector<ad::Tensor> r0, r1;
      for (std::size_t k = 0; k < kNumScales; ++k) {
        r0.push_back(o::gather_rows(f3d[0][k], c.pyramid[0].index[k]));
        r1.push_back(o::gather_rows(f3d[1][k], c.pyramid[1].index[k]));
      }
      pred.flow3d = decode_flow3d(ps, p + "dec3d.", r0, c.pyramid[0], r1, c.pyramid[1]);
      gt.flow3d = c.gt.flow3d;
      out.pred.flow3d = pred.flow3d;
    }
    for (const auto& t : pred.flow2d) require_finite(t, "decoder");
    for (const auto& t : pred.flow3d) require_finite(t, "decoder");
    if (with_losses) accumulate(task, task_loss(pred, gt, w));
  }
  if (!with_losses) return out;
  require_finite(task, "task loss");
  out.task = task;
  out.align = align_total;
  out.contra = contra_total;
  out.total = total_loss(task, align_total, contra_total, w);
  return out;
}

}  // namespace

Losses forward(const ModelConfig& cfg, const ad::ParamStore& ps, const SampleCache& c, std::uint64_t noise_seed,
               bool with_losses) {
  return forward_impl(cfg, ps, c, c.ze, noise_seed, with_losses);
}

Losses forward_live(const ModelConfig& cfg, const ad::ParamStore& ps, const SampleCache& c, const synth::Sample& s,
                    const events::EventEncoder& enc, std::uint64_t noise_seed) {
  return forward_impl(cfg, ps, c, frame_event_features(s, enc), noise_seed, true);
}

Prediction predict(const ModelConfig& cfg, const ad::ParamStore& ps, const SampleCache& c) {
  ad::NoGradGuard guard;
  const Losses l = forward(cfg, ps, c, 0, false);
  Prediction p;
  const auto full = full_resolution(l.pred.flow2d.at(0));
  const std::size_t n = full.dim(1) * full.dim(2);
  p.flow2d.resize(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    p.flow2d[2 * i] = static_cast<float>(full[i]);
    p.flow2d[2 * i + 1] = static_cast<float>(full[n + i]);
  }
  const auto& f3 = l.pred.flow3d.at(0);
  for (std::size_t i = 0; i < f3.dim(0); ++i) p.flow3d.push_back({f3[3 * i], f3[3 * i + 1], f3[3 * i + 2]});
  return p;
}

Variant infer_variant(const ad::ParamStore& ps) {
  if (ps.contains("m2d.img.conv1.w")) return Variant::kIndep;
  if (ps.contains("adp.hi1.w")) return Variant::kNoEes;
  if (ps.contains("img.conv1.w")) return ps.contains("ccl.phi.w") ? Variant::kFull : Variant::kJoint;
  throw ConfigError("checkpoint does not hold a model");
}

ad::ParamStore bundle(const ad::ParamStore& model, const events::EventEncoder& enc) {
  ad::ParamStore all = model;
  all.merge(enc.params, kEdgePrefix);
  return all;
}

std::pair<ad::ParamStore, events::EventEncoder> unbundle(const ad::ParamStore& all) {
  ad::ParamStore model;
  for (const auto& [name, t] : all.items())
    if (name.rfind(kEdgePrefix, 0) != 0) model.put(name, t);
  events::EventEncoder enc;
  enc.params = all.with_prefix_stripped(kEdgePrefix);
  enc.frozen = true;
  if (enc.params.size() == 0) throw ConfigError("checkpoint holds no event encoder");
  return {std::move(model), std::move(enc)};
}

}  // namespace x2f::dec
