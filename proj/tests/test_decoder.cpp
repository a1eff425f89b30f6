#include <cmath>

#include "doctest.h"
#include "micro.hpp"
#include "x2f/autodiff/checkpoint.hpp"
#include "x2f/autodiff/gradcheck.hpp"
#include "x2f/decoder/model.hpp"
#include "x2f/error.hpp"

using namespace x2f;
using namespace x2f::dec;
namespace o = x2f::ad::ops;

namespace {

ad::Tensor random_const(ad::Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor::constant(std::move(shape), std::move(v));
}

ad::ParamStore zeroed(const ad::ParamStore& ps) {
  ad::ParamStore out;
  for (const auto& [name, t] : ps.items()) out.add(name, t.shape(), std::vector<double>(t.numel(), 0.0));
  return out;
}

enc::Points random_points(ad::Rng& rng, std::size_t n) {
  enc::Points pts(n);
  for (auto& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(2, 5)};
  return pts;
}

struct Micro {
  synth::Sample sample;
  events::EventEncoder enc;
  SampleCache cache;
};

Micro micro(std::uint64_t enc_seed = 3) {
  Micro m;
  m.sample = testing::micro_sample();
  ad::Rng rng(enc_seed);
  m.enc = events::EventEncoder::init(rng);
  m.enc.frozen = true;
  m.cache = prepare_sample(m.sample, m.enc);
  return m;
}

std::vector<ad::Tensor> grid_pyramid(ad::Rng& rng, std::size_t h) {
  std::vector<ad::Tensor> out;
  for (std::size_t l = 0; l < kNumScales; ++l) out.push_back(random_const(rng, {kScaleChannels[l], h >> l, h >> l}));
  return out;
}

}  // namespace

TEST_CASE("2D decoder building blocks") {
  ad::Rng rng(1);
  SUBCASE("zero heads give zero flow at every level") {
    ad::ParamStore ps;
    init_decoder2d(ps, rng, "d.");
    const auto flows = decode_flow2d(zeroed(ps), "d.", grid_pyramid(rng, 8), grid_pyramid(rng, 8));
    REQUIRE(flows.size() == kNumScales);
    for (std::size_t l = 0; l < kNumScales; ++l) {
      CHECK(flows[l].shape() == ad::Shape{2, 8u >> l, 8u >> l});
      for (double v : flows[l].data()) CHECK(v == 0.0);
    }
  }
  SUBCASE("upsampling a constant flow doubles it") {
    std::vector<double> v(2 * 9);
    std::fill(v.begin(), v.begin() + 9, 0.75);
    std::fill(v.begin() + 9, v.end(), -1.25);
    const auto up = upsample_flow(ad::Tensor::constant({2, 3, 3}, v));
    CHECK(up.shape() == ad::Shape{2, 6, 6});
    for (std::size_t i = 0; i < 36; ++i) {
      CHECK(up[i] == 1.5);
      CHECK(up[36 + i] == -2.5);
    }
  }
  SUBCASE("warp by zero flow is the identity") {
    const auto x = random_const(rng, {3, 5, 4});
    const auto y = warp2d(x, ad::Tensor::zeros({2, 5, 4}));
    CHECK(y.to_vector() == x.to_vector());
  }
  SUBCASE("warp by one column reads the right neighbor") {
    const auto x = random_const(rng, {1, 2, 4});
    const auto y = warp2d(x, ad::Tensor::constant({2, 2, 4}, {1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0}));
    CHECK(y[0] == x[1]);
    CHECK(y[2] == x[3]);
    CHECK(y[3] == x[3]);  // border clamp
  }
  SUBCASE("level extent mismatch") {
    ad::ParamStore ps;
    init_decoder2d(ps, rng, "d.");
    auto bad = grid_pyramid(rng, 8);
    bad[1] = random_const(rng, {kScaleChannels[1], 3, 3});
    CHECK_THROWS_AS(decode_flow2d(ps, "d.", bad, bad), ShapeError);
    CHECK_THROWS_AS(decode_flow2d(ps, "d.", grid_pyramid(rng, 8), grid_pyramid(rng, 16)), ShapeError);
  }
}

TEST_CASE("point pyramid and 3D decoder") {
  ad::Rng rng(2);
  const auto pts = random_points(rng, 32);
  SUBCASE("FPS is deterministic and greedy") {
    auto a = farthest_point_sampling(pts, 16, 9);
    CHECK(a == farthest_point_sampling(pts, 16, 9));
    std::sort(a.begin(), a.end());
    CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
    // On a line the second pick is the far end from the start.
    enc::Points line;
    for (int i = 0; i < 10; ++i) line.push_back({static_cast<double>(i), 0.0, 3.0});
    const auto o1 = farthest_point_sampling(line, 3, 4);
    CHECK(o1[1] == (o1[0] < 5 ? 9u : 0u));
  }
  SUBCASE("pyramid levels are nested FPS prefixes") {
    const auto pyr = build_point_pyramid(pts, 5);
    CHECK(pyr.points[0].size() == 32);
    CHECK(pyr.points[1].size() == 16);
    CHECK(pyr.points[2].size() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(pyr.index[2][i] == pyr.index[1][i]);
    CHECK(pyr.up[0].size() == 32);
    CHECK(pyr.up[1].size() == 16);
    CHECK_THROWS_AS(build_point_pyramid(random_points(rng, 15), 1), ConfigError);
  }
  SUBCASE("coincident coarse cluster propagates its flow") {
    const enc::Points coarse(4, {0.5, 0.5, 3.0});
    const auto mix = knn_mix(coarse, pts);
    const auto f = o::mix_rows(ad::Tensor::constant({4, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3}), mix);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(f[3 * i] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(f[3 * i + 1] == doctest::Approx(2.0).epsilon(1e-12));
      CHECK(f[3 * i + 2] == doctest::Approx(3.0).epsilon(1e-12));
    }
  }
  SUBCASE("knn weights are inverse distances") {
    const enc::Points from{{0, 0, 0}, {1, 0, 0}, {4, 0, 0}, {9, 0, 0}};
    const auto mix = knn_mix(from, {{0.5, 0.0, 0.0}});
    REQUIRE(mix[0].size() == 3);
    // d = 0.5, 0.5, 3.5 -> weights 2, 2, 2/7 normalized.
    const double total = 2.0 + 2.0 + 2.0 / 7.0;
    double w4 = 0.0;
    for (const auto& [j, w] : mix[0])
      if (j == 2) w4 = w;
    CHECK(w4 == doctest::Approx((2.0 / 7.0) / total).epsilon(1e-12));
  }
  SUBCASE("zero heads give zero scene flow") {
    ad::ParamStore ps;
    init_decoder3d(ps, rng, "d.");
    const auto pyr0 = build_point_pyramid(pts, 1);
    const auto pyr1 = build_point_pyramid(random_points(rng, 32), 2);
    std::vector<ad::Tensor> f0, f1;
    for (std::size_t l = 0; l < kNumScales; ++l) {
      f0.push_back(random_const(rng, {32u >> l, kScaleChannels[l]}));
      f1.push_back(random_const(rng, {32u >> l, kScaleChannels[l]}));
    }
    const auto flows = decode_flow3d(zeroed(ps), "d.", f0, pyr0, f1, pyr1);
    for (std::size_t l = 0; l < kNumScales; ++l) {
      CHECK(flows[l].shape() == ad::Shape{32u >> l, 3});
      for (double v : flows[l].data()) CHECK(v == 0.0);
    }
    f0[2] = random_const(rng, {5, kScaleChannels[2]});
    CHECK_THROWS_AS(decode_flow3d(ps, "d.", f0, pyr0, f1, pyr1), ShapeError);
  }
}

TEST_CASE("task and total loss") {
  LossWeights w;
  SUBCASE("single level single pixel") {
    w.omega = {1.0, 0.0, 0.0};
    FlowPyramids pred{{ad::Tensor::constant({2, 1, 1}, {3.0, 4.0})}, {}};
    FlowPyramids gt{{ad::Tensor::zeros({2, 1, 1})}, {}};
    CHECK(task_loss(pred, gt, w).item() == 5.0);
    CHECK(task_loss(gt, gt, w).item() == 0.0);
  }
  SUBCASE("doubling a level weight doubles its contribution") {
    ad::Rng rng(4);
    FlowPyramids pred, gt;
    for (std::size_t l = 0; l < kNumScales; ++l) {
      pred.flow2d.push_back(random_const(rng, {2, 4u >> l, 4u >> l}));
      gt.flow2d.push_back(random_const(rng, {2, 4u >> l, 4u >> l}));
      pred.flow3d.push_back(random_const(rng, {8u >> l, 3}));
      gt.flow3d.push_back(random_const(rng, {8u >> l, 3}));
    }
    const double base = task_loss(pred, gt, w).item();
    CHECK(base > 0.0);
    LossWeights only1 = w;
    only1.omega = {0.0, w.omega[1], 0.0};
    LossWeights twice = w;
    twice.omega[1] *= 2.0;
    CHECK(task_loss(pred, gt, twice).item() ==
          doctest::Approx(base + task_loss(pred, gt, only1).item()).epsilon(1e-12));
  }
  SUBCASE("pyramid mismatch") {
    FlowPyramids pred{{ad::Tensor::zeros({2, 2, 2})}, {}};
    FlowPyramids gt{{ad::Tensor::zeros({2, 1, 1})}, {}};
    CHECK_THROWS_AS(task_loss(pred, gt, w), ShapeError);
    FlowPyramids two{{ad::Tensor::zeros({2, 2, 2}), ad::Tensor::zeros({2, 1, 1})}, {}};
    CHECK_THROWS_AS(task_loss(pred, two, w), ShapeError);
  }
  SUBCASE("composite objective") {
    const auto t = ad::Tensor::scalar(1.0), a = ad::Tensor::scalar(2.0), c = ad::Tensor::scalar(4.0);
    LossWeights lw = w;
    lw.lambda_align = 0.1;
    lw.lambda_contra = 0.05;
    CHECK(total_loss(t, a, c, lw).item() == doctest::Approx(1.4).epsilon(1e-15));
    LossWeights none = w;
    none.lambda_align = none.lambda_contra = 0.0;
    CHECK(total_loss(t, a, c, none).item() == 1.0);
    const auto z = ad::Tensor::scalar(0.0);
    CHECK(total_loss(z, z, z, w).item() == 0.0);
    LossWeights neg = w;
    neg.lambda_align = -1.0;
    CHECK_THROWS_AS(total_loss(t, a, c, neg), ConfigError);
  }
  SUBCASE("ground truth pyramid pools and rescales") {
    std::vector<double> v(2 * 64, 0.0);
    for (std::size_t i = 0; i < 64; ++i) v[i] = 4.0;
    const auto g = gt_pyramid2d(ad::Tensor::constant({2, 8, 8}, v));
    CHECK(g[0][0] == 2.0);
    CHECK(g[1][0] == 1.0);
    CHECK(g[2][0] == 0.5);
    CHECK(g[2][1] == 0.0);
  }
}

TEST_CASE("variant parsing and structure") {
  for (const auto& n : variant_names()) CHECK(variant_name(parse_variant(n)) == n);
  CHECK_THROWS_AS(parse_variant("bogus"), ConfigError);
  ModelConfig cfg;
  cfg.variant = Variant::kIndep;
  const auto indep = init_model(cfg, 1);
  CHECK(indep.contains("m2d.dec2d.h1a.w"));
  CHECK(indep.contains("m3d.dec3d.h1a.w"));
  CHECK_FALSE(indep.contains("m2d.dec3d.h1a.w"));
  CHECK_FALSE(indep.contains("m2d.ccl.phi.w"));
  CHECK(infer_variant(indep) == Variant::kIndep);
  cfg.variant = Variant::kNoEes;
  const auto noees = init_model(cfg, 1);
  CHECK(noees.contains("adp.he1.w"));
  CHECK_FALSE(noees.contains("proj.hi1.w"));
  CHECK(infer_variant(noees) == Variant::kNoEes);
  cfg.variant = Variant::kJoint;
  CHECK(infer_variant(init_model(cfg, 1)) == Variant::kJoint);
  cfg.variant = Variant::kFull;
  CHECK(infer_variant(init_model(cfg, 1)) == Variant::kFull);
}

TEST_CASE("micro-instance forward") {
  auto m = micro();
  ModelConfig cfg;
  const auto ps = init_model(cfg, 7);
  SUBCASE("full model produces every loss term") {
    const auto l = forward(cfg, ps, m.cache, 1);
    CHECK(l.task.item() > 0.0);
    CHECK(l.align.defined());
    CHECK(l.contra.defined());
    CHECK(l.total.item() ==
          doctest::Approx(l.task.item() + cfg.weights.lambda_align * l.align.item() +
                          cfg.weights.lambda_contra * l.contra.item())
              .epsilon(1e-12));
    CHECK(l.pred.flow2d[0].shape() == ad::Shape{2, 4, 4});
    CHECK(l.pred.flow3d[0].shape() == ad::Shape{16, 3});
    const auto p = predict(cfg, ps, m.cache);
    CHECK(p.flow2d.size() == 2 * 64);
    CHECK(p.flow3d.size() == 16);
  }
  SUBCASE("no-reg has no alignment term and indep no contrast term") {
    ModelConfig nr = cfg;
    nr.variant = Variant::kNoReg;
    const auto l = forward(nr, init_model(nr, 7), m.cache, 1);
    CHECK_FALSE(l.align.defined());
    CHECK(l.contra.defined());
    ModelConfig in = cfg;
    in.variant = Variant::kIndep;
    const auto li = forward(in, init_model(in, 7), m.cache, 1);
    CHECK_FALSE(li.contra.defined());
    CHECK(li.align.defined());
  }
  SUBCASE("zero alignment weight leaves the gradient untouched") {
    ModelConfig a0 = cfg;
    a0.weights.lambda_align = 0.0;
    ModelConfig nr = cfg;
    nr.variant = Variant::kNoReg;
    const auto ga = ad::backward(forward(a0, ps, m.cache, 1).total);
    const auto gb = ad::backward(forward(nr, ps, m.cache, 1).total);
    for (const auto& [name, t] : ps.items()) CHECK(ga.of(t) == gb.of(t));
  }
  SUBCASE("NaN input is reported with its module") {
    auto bad = m.cache;
    auto v = bad.image[0].to_vector();
    v[5] = std::nan("");
    bad.image[0] = ad::Tensor::constant(bad.image[0].shape(), v);
    try {
      forward(cfg, ps, bad, 1);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("encoders") == 0);
    }
  }
}

TEST_CASE("L_total gradient on the micro-instance") {
  auto m = micro();
  ModelConfig cfg;
  const auto ps = testing::jittered(init_model(cfg, 7), 2);
  ad::FdOptions opt;
  opt.max_entries = 2;
  opt.seed = 5;
  const double err = ad::finite_diff_check(
      [&](const ad::ParamStore& p) { return forward(cfg, p, m.cache, 1).total; }, ps, opt);
  CHECK(err < 1e-4);
}

TEST_CASE("training steps") {
  auto m = micro();
  ModelConfig cfg;
  ad::AdamHyper hyper;
  hyper.lr = 1e-3;
  const std::vector<const SampleCache*> batch{&m.cache};
  SUBCASE("overfitting one sample lowers L_total") {
    auto ps = init_model(cfg, 3);
    ad::OptimState opt;
    std::vector<double> losses;
    for (int i = 0; i < 10; ++i) losses.push_back(train_step(cfg, ps, opt, hyper, batch, 42).total);
    CHECK(losses.back() < losses.front());
  }
  SUBCASE("fixed seed is bitwise reproducible") {
    auto a = init_model(cfg, 3), b = init_model(cfg, 3);
    ad::OptimState oa, ob;
    for (int i = 0; i < 3; ++i) {
      CHECK(train_step(cfg, a, oa, hyper, batch, 9 + i).total == train_step(cfg, b, ob, hyper, batch, 9 + i).total);
    }
    CHECK(ad::encode_checkpoint(a) == ad::encode_checkpoint(b));
  }
  SUBCASE("event encoder gradients are exactly zero") {
    auto live = m.enc;
    const auto ps = init_model(cfg, 3);
    const auto l = forward_live(cfg, ps, m.cache, m.sample, live, 1);
    const auto g = ad::backward(l.total);
    for (const auto& [name, t] : live.params.items()) {
      CHECK_FALSE(g.reached(t));
      for (double v : g.of(t)) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("edge pretraining loop") {
  std::vector<PretrainSample> data;
  for (const auto& s : synth::generate_dataset(3, 4)) data.push_back(prepare_pretrain(s));
  PretrainConfig cfg;
  SUBCASE("zero epochs keep the initialization") {
    cfg.epochs = 0;
    const auto enc = pretrain_edge_encoder(data, cfg);
    ad::Rng rng(ad::derive_seed(cfg.seed, 20));
    const auto init = events::EventEncoder::init(rng);
    for (const auto& [name, t] : init.params.items()) CHECK(enc.params.get(name).to_vector() == t.to_vector());
    CHECK(enc.frozen);
    CHECK(enc.params.contains("norm1"));
  }
  SUBCASE("fixed seed gives a bitwise-identical checkpoint") {
    cfg.epochs = 2;
    std::vector<double> la, lb;
    const auto a = pretrain_edge_encoder(data, cfg, {}, &la);
    const auto b = pretrain_edge_encoder(data, cfg, {}, &lb);
    CHECK(ad::encode_checkpoint(a.params) == ad::encode_checkpoint(b.params));
    CHECK(la == lb);
    CHECK(la.size() == 2);
  }
  SUBCASE("empty dataset") { CHECK_THROWS_AS(pretrain_edge_encoder({}, cfg), ConfigError); }
}

TEST_CASE("checkpoint bundle round trip") {
  auto m = micro();
  ModelConfig cfg;
  const auto ps = init_model(cfg, 2);
  const auto all = ad::decode_checkpoint(ad::encode_checkpoint(bundle(ps, m.enc)));
  const auto [model, enc] = unbundle(all);
  CHECK(ad::encode_checkpoint(model) == ad::encode_checkpoint(ps));
  CHECK(ad::encode_checkpoint(enc.params) == ad::encode_checkpoint(m.enc.params));
  CHECK(enc.frozen);
}
