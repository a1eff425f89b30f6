// Acceptance checks. Usage: acceptance [criterion...]; no arguments runs all.
// Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "micro.hpp"
#include "x2f/autodiff/checkpoint.hpp"
#include "x2f/autodiff/gradcheck.hpp"
#include "x2f/autodiff/ops.hpp"
#include "x2f/cli/cli.hpp"
#include "x2f/decoder/model.hpp"
#include "x2f/fusion/fusion.hpp"
#include "x2f/io/formats.hpp"
#include "x2f/metrics/metrics.hpp"

using namespace x2f;
namespace fs = std::filesystem;
namespace o = x2f::ad::ops;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ad::Tensor random_const(ad::Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor::constant(std::move(shape), std::move(v));
}

events::EventStream random_stream(ad::Rng& rng, std::size_t h, std::size_t w) {
  events::EventStream s{{}, 0.0, 0.1, h, w};
  const std::size_t n = rng.index(300);
  for (std::size_t i = 0; i < n; ++i) {
    events::Event e;
    e.t = 0.1 * rng.uniform();
    e.x = static_cast<int>(rng.index(w));
    e.y = static_cast<int>(rng.index(h));
    e.p = rng.uniform() < 0.5 ? -1 : 1;
    s.events.push_back(e);
  }
  std::sort(s.events.begin(), s.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return s;
}

struct Micro {
  synth::Sample sample;
  events::EventEncoder enc;
  dec::SampleCache cache;
};

Micro micro() {
  Micro m;
  m.sample = testing::micro_sample();
  ad::Rng rng(3);
  m.enc = events::EventEncoder::init(rng);
  m.enc.frozen = true;
  m.cache = dec::prepare_sample(m.sample, m.enc);
  return m;
}

Outcome gradient_fidelity() {
  const double tol = 1e-4;
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = micro();
  ad::FdOptions opt;
  opt.max_entries = 2;
  opt.seed = 5;
  std::map<std::string, double> err;

  const auto pre = dec::prepare_pretrain(m.sample);
  ad::Rng er(4);
  const auto enc0 = testing::jittered(events::EventEncoder::init(er).params, 6);
  err["L_edge"] = ad::finite_diff_check(
      [&](const ad::ParamStore& ps) {
        events::EventEncoder e;
        e.params = ps;
        return events::edge_pretrain_loss(events::event_encode(pre.voxels, e), pre.future, e);
      },
      enc0, opt);

  dec::ModelConfig cfg;
  const auto ps = testing::jittered(dec::init_model(cfg, 7), 2);
  using Pick = std::function<ad::Tensor(const dec::Losses&)>;
  const std::vector<std::pair<std::string, Pick>> terms{
      {"L_align", [](const dec::Losses& l) { return l.align; }},
      {"L_pull", [](const dec::Losses& l) { return l.pull; }},
      {"L_push", [](const dec::Losses& l) { return l.push; }},
      {"L_task", [](const dec::Losses& l) { return l.task; }},
      {"L_total", [](const dec::Losses& l) { return l.total; }},
  };
  for (const auto& [name, pick] : terms) {
    err[name] = ad::finite_diff_check(
        [&, pick = pick](const ad::ParamStore& p) { return pick(dec::forward(cfg, p, m.cache, 1)); }, ps, opt);
  }
  Outcome out{true, ""};
  for (const auto& [name, e] : err) {
    out.pass = out.pass && e <= tol;
    out.detail += name + fmt(" %.2e ", e);
  }
  const double secs = seconds_since(t0);
  out.pass = out.pass && secs < 120.0;
  out.detail += "(tol 1e-4), " + fmt("%.1f s", secs) + " (< 120 s)";
  return out;
}

Outcome normalization() {
  const double tol = 1e-9;
  ad::Rng rng(21);
  double worst_global = 0.0, worst_local = 0.0, worst_fuse = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 2 + rng.index(5), h = 2 + rng.index(5), w = 2 + rng.index(5);
    const double scale = std::pow(10.0, rng.uniform(-1.0, 1.5));
    ad::ParamStore ps;
    fusion::init_global(ps, rng, "g.", c);
    fusion::init_local(ps, rng, "l.", c);
    auto grid = [&] { return random_const(rng, {c, h, w}, -scale, scale); };
    const fusion::FramePair zi{grid(), grid()}, zl{grid(), grid()}, ze{grid(), grid()};
    const auto omega = fusion::reliability_global(ps, "g.", zi, zl, ze);
    worst_global = std::max(worst_global, std::abs(omega[0] + omega[1] - 1.0));

    const auto a = fusion::reliability_local(ps, "l.", zi.t0, zl.t0, ze.t0);
    const std::size_t n = h * w;
    for (std::size_t x = 0; x < n; ++x)
      worst_local = std::max(worst_local, std::abs(a[x] + a[n + x] + a[2 * n + x] - 1.0));

    const auto rows = o::transpose(o::reshape(a, {3, n}));
    const auto wts = fusion::fusion_weights(fusion::with_event_anchor(omega), rows);
    for (std::size_t x = 0; x < n; ++x)
      worst_fuse = std::max(worst_fuse, std::abs(wts[3 * x] + wts[3 * x + 1] + wts[3 * x + 2] - 1.0));
  }
  return {worst_global <= tol && worst_local <= tol && worst_fuse <= tol,
          "max deviation: omega " + fmt("%.1e", worst_global) + ", A " + fmt("%.1e", worst_local) + ", fused weights " +
              fmt("%.1e", worst_fuse) + " over 1000 instances each (tol 1e-9)"};
}

Outcome freeze_contract() {
  auto m = micro();
  dec::ModelConfig cfg;
  auto ps = dec::init_model(cfg, 3);
  ad::OptimState opt;
  ad::AdamHyper hyper;
  hyper.lr = 1e-3;
  const auto before = ad::encode_checkpoint(m.enc.params);
  bool zero = true;
  for (int step = 0; step < 100; ++step) {
    const auto l = dec::forward_live(cfg, ps, m.cache, m.sample, m.enc, static_cast<std::uint64_t>(step));
    const auto g = ad::backward(l.total);
    for (const auto& [name, t] : m.enc.params.items())
      for (double v : g.of(t)) zero = zero && v == 0.0;
    ad::GradMap grads;
    for (const auto& [name, t] : ps.items())
      if (g.reached(t)) grads[name] = g.of(t);
    ad::adam_step(ps, grads, opt, hyper);
  }
  const bool same = ad::encode_checkpoint(m.enc.params) == before;
  return {zero && same, std::string("encoder gradients ") + (zero ? "exactly zero" : "NON-ZERO") + ", parameters " +
                            (same ? "bitwise unchanged" : "CHANGED") + " after 100 steps"};
}

Outcome edge_strength_oracle() {
  ad::Rng rng(22);
  double lo = 1.0, hi = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto e = events::edge_strength(random_stream(rng, 2 + rng.index(7), 2 + rng.index(7)));
    for (double v : e.values) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  const bool range = lo >= 0.0 && hi <= 1.0;
  const events::EventStream empty{{}, 0.0, 1.0, 3, 3};
  bool empty_ok = true;
  for (double v : events::edge_strength(empty).values) empty_ok = empty_ok && v == 0.0;
  const events::EventStream sync{{{0.3, 1, 1, 1}, {0.3, 1, 1, -1}, {0.3, 1, 1, 1}, {0.5, 0, 0, 1}}, 0.0, 1.0, 3, 3};
  const bool sync_ok = events::edge_strength(sync).at(1, 1) == 1.0;
  const events::EventStream ends{{{0.0, 2, 0, 1}, {1.0, 2, 0, 1}}, 0.0, 1.0, 3, 3};
  const bool ends_ok = events::edge_strength(ends).at(0, 2) == 0.0;
  return {range && empty_ok && sync_ok && ends_ok,
          "range [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "] over 1000 streams; zero events " +
              (empty_ok ? "0" : "WRONG") + ", synchronized max " + (sync_ok ? "1" : "WRONG") + ", endpoints " +
              (ends_ok ? "0" : "WRONG")};
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<dec::PretrainSample> pretrain_set(const std::vector<synth::Sample>& samples) {
  std::vector<dec::PretrainSample> out;
  for (const auto& s : samples) out.push_back(dec::prepare_pretrain(s));
  return out;
}

Outcome pretraining() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train = pretrain_set(synth::generate_dataset(1, 64));
  const auto held = pretrain_set(synth::generate_dataset(2, 16));
  dec::PretrainConfig cfg;
  std::vector<double> loss;
  const auto enc = dec::pretrain_edge_encoder(train, cfg, {}, &loss);
  const double secs = seconds_since(t0);

  std::vector<double> smooth;
  for (std::size_t i = 4; i < std::min<std::size_t>(loss.size(), 20); ++i)
    smooth.push_back((loss[i - 4] + loss[i - 3] + loss[i - 2] + loss[i - 1] + loss[i]) / 5.0);
  bool decreasing = smooth.size() >= 2;
  for (std::size_t i = 1; i < smooth.size(); ++i) decreasing = decreasing && smooth[i] < smooth[i - 1];

  std::vector<double> pred, gt;
  for (const auto& s : held) {
    const auto maps = dec::predict_edges(enc, s);
    for (std::size_t k = 0; k < maps.size(); ++k) {
      for (std::size_t i = 0; i < maps[k].numel(); ++i) pred.push_back(maps[k][i]);
      gt.insert(gt.end(), s.future[k].values.begin(), s.future[k].values.end());
    }
  }
  const double r = pearson(pred, gt);
  return {decreasing && r > 0.5 && secs < 180.0,
          "smoothed L_edge " + fmt("%.4f", smooth.front()) + " -> " + fmt("%.4f", smooth.back()) +
              (decreasing ? " (strictly decreasing)" : " (NOT decreasing)") + ", held-out Pearson r " +
              fmt("%.3f", r) + " (> 0.5), " + fmt("%.1f s", secs) + " (< 180 s)"};
}

struct Bench {
  std::vector<synth::Sample> val;
  std::vector<dec::SampleCache> train_cache, val_cache;
};

const Bench& bench() {
  static const Bench b = [] {
    Bench out;
    const auto train = synth::generate_dataset(1, 64);
    out.val = synth::generate_dataset(2, 32);
    const auto enc = dec::pretrain_edge_encoder(pretrain_set(train), dec::PretrainConfig{});
    for (const auto& s : train) out.train_cache.push_back(dec::prepare_sample(s, enc));
    for (const auto& s : out.val) out.val_cache.push_back(dec::prepare_sample(s, enc));
    return out;
  }();
  return b;
}

struct Scores {
  double epe2d = 0.0;
  double epe3d = 0.0;
};

Scores evaluate(const dec::ModelConfig& cfg, const ad::ParamStore& ps) {
  const auto& b = bench();
  metrics::EvalReport rep;
  for (std::size_t i = 0; i < b.val.size(); ++i) {
    const auto p = dec::predict(cfg, ps, b.val_cache[i]);
    rep.add(metrics::flow_metrics_2d(p.flow2d, b.val[i].flow2d), metrics::flow_metrics_3d(p.flow3d, b.val[i].flow3d));
  }
  return {rep.epe2d, rep.epe3d};
}

Scores zero_baseline() {
  const auto& b = bench();
  metrics::EvalReport rep;
  for (const auto& s : b.val) {
    const std::vector<float> z2(s.flow2d.size(), 0.0f);
    const enc::Points z3(s.flow3d.size(), {0.0, 0.0, 0.0});
    rep.add(metrics::flow_metrics_2d(z2, s.flow2d), metrics::flow_metrics_3d(z3, s.flow3d));
  }
  return {rep.epe2d, rep.epe3d};
}

Scores train_and_score(dec::Variant v, std::uint64_t seed) {
  dec::TrainConfig cfg;
  cfg.model.variant = v;
  cfg.seed = seed;
  const auto ps = dec::train_model(cfg, bench().train_cache);
  return evaluate(cfg.model, ps);
}

Outcome end_to_end() {
  bench();
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = train_and_score(dec::Variant::kFull, 1);
  const double secs = seconds_since(t0);
  const auto base = zero_baseline();
  const double r2 = s.epe2d / base.epe2d, r3 = s.epe3d / base.epe3d;
  return {r2 < 0.5 && r3 < 0.5 && secs < 600.0,
          "EPE_2D " + fmt("%.4f", s.epe2d) + " = " + fmt("%.3f", r2) + " x baseline, EPE_3D " + fmt("%.4f", s.epe3d) +
              " = " + fmt("%.3f", r3) + " x baseline (< 0.5 each), " + fmt("%.0f s", secs) + " (< 600 s)"};
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Outcome ablation() {
  const std::vector<dec::Variant> variants{dec::Variant::kFull, dec::Variant::kNoReg, dec::Variant::kNoEes,
                                           dec::Variant::kIndep};
  std::map<dec::Variant, std::vector<double>> e2, e3;
  for (const auto v : variants) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto s = train_and_score(v, seed);
      e2[v].push_back(s.epe2d);
      e3[v].push_back(s.epe3d);
    }
  }
  // joint-ccl is the full model.
  const double full2 = median3(e2[dec::Variant::kFull]), full3 = median3(e3[dec::Variant::kFull]);
  const double noreg2 = median3(e2[dec::Variant::kNoReg]), noees2 = median3(e2[dec::Variant::kNoEes]);
  const double ind2 = median3(e2[dec::Variant::kIndep]), ind3 = median3(e3[dec::Variant::kIndep]);
  const bool ees = full2 <= noreg2 && noreg2 <= noees2;
  const bool joint = full2 <= ind2 && full3 <= ind3;
  return {ees && joint, "median EPE_2D full " + fmt("%.4f", full2) + " / no-reg " + fmt("%.4f", noreg2) + " / no-ees " +
                            fmt("%.4f", noees2) + (ees ? " (ordered)" : " (NOT ordered)") + "; joint-ccl vs indep 2D " +
                            fmt("%.4f", full2) + " / " + fmt("%.4f", ind2) + ", 3D " + fmt("%.4f", full3) + " / " +
                            fmt("%.4f", ind3) + (joint ? " (ordered)" : " (NOT ordered)")};
}

Outcome metric_exactness() {
  const auto a = metrics::flow_metrics_2d(std::vector<float>{0.0f, 0.0f}, std::vector<double>{3.0, 4.0});
  const auto b = metrics::flow_metrics_2d(std::vector<float>{96.0f, 0.0f}, std::vector<double>{100.0, 0.0});
  const auto c = metrics::flow_metrics_3d({{0.0, 0.0, 0.0}}, {{0.03, 0.0, 0.04}});
  const bool fl_out = a.epe == 5.0 && a.fl == 1.0 && a.acc1px == 0.0;
  const bool fl_in = b.epe == 4.0 && b.fl == 0.0;
  const bool boundary = c.epe == 0.05 && c.acc05 == 0.0 && c.acc10 == 1.0;
  return {fl_out && fl_in && boundary, std::string("EPE 5 on |gt| 5 ") + (fl_out ? "outlier" : "WRONG") +
                                           ", EPE 4 on |gt| 100 " + (fl_in ? "inlier" : "WRONG") + ", 3-4-5 case " +
                                           (boundary ? "acc05 0 / acc10 1" : "WRONG")};
}

Outcome round_trips() {
  ad::Rng rng(23);
  bool flo = true, ckpt = true;
  for (int trial = 0; trial < 50; ++trial) {
    io::Flow2D f{1 + rng.index(20), 1 + rng.index(20), {}};
    for (std::size_t i = 0; i < 2 * f.width * f.height; ++i) {
      f.uv.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(rng.next())));
      if (std::isnan(f.uv.back())) f.uv.back() = static_cast<float>(rng.uniform(-1e6, 1e6));
    }
    const auto bytes = io::encode_flo(f);
    const auto back = io::decode_flo(bytes);
    flo = flo && back.width == f.width && back.height == f.height && io::encode_flo(back) == bytes &&
          std::memcmp(back.uv.data(), f.uv.data(), 4 * f.uv.size()) == 0;

    ad::ParamStore ps;
    const std::size_t n = 1 + rng.index(5);
    for (std::size_t k = 0; k < n; ++k) {
      const ad::Shape shape{1 + rng.index(4), 1 + rng.index(4)};
      std::vector<double> v(ad::numel(shape));
      for (double& x : v) x = std::bit_cast<double>(rng.next() & ~(0x7ffULL << 52)) * rng.uniform(-1e3, 1e3);
      ps.add("p" + std::to_string(k), shape, v);
    }
    const auto cb = ad::encode_checkpoint(ps);
    const auto cback = ad::decode_checkpoint(cb);
    ckpt = ckpt && ad::encode_checkpoint(cback) == cb && cback.size() == ps.size();
    for (const auto& [name, t] : ps.items())
      for (std::size_t i = 0; i < t.numel(); ++i)
        ckpt = ckpt && std::bit_cast<std::uint64_t>(cback.get(name)[i]) == std::bit_cast<std::uint64_t>(t[i]);
  }

  const double contrast = 0.15;
  bool ramp = true;
  for (const double steps : {0.5, 1.0, 2.7, 3.2, 5.9}) {
    std::vector<std::vector<double>> frames;
    for (int k = 0; k <= 10; ++k) frames.push_back({std::exp(std::log(0.1) + steps * contrast * k / 10.0)});
    const auto s = synth::simulate_events(frames, 1, 1, 0.0, 0.1, contrast);
    ramp = ramp && s.events.size() == static_cast<std::size_t>(std::floor(steps));
  }
  return {flo && ckpt && ramp, std::string(".flo ") + (flo ? "bitwise" : "MISMATCH") + ", checkpoint " +
                                   (ckpt ? "bitwise" : "MISMATCH") + " over 50 random payloads; ramp event counts " +
                                   (ramp ? "floor(dlog / C)" : "WRONG")};
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = io::read_bytes(e.path());
  return out;
}

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / "x2f_acceptance_determinism";
  const auto p = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::vector<std::string>> pipeline{
      {"gen", "--out", p("data"), "--n", "4", "--seed", "5", "--degrade", "sparse-lidar:2"},
      {"pretrain", "--data", p("data"), "--out", p("enc.params"), "--epochs", "2", "--seed", "3"},
      {"train", "--data", p("data"), "--edge-ckpt", p("enc.params"), "--out", p("model.params"), "--epochs", "1",
       "--seed", "4"},
      {"eval", "--data", p("data"), "--ckpt", p("model.params"), "--report", p("report.json"), "--dump", p("pred")},
  };
  std::vector<std::map<std::string, std::vector<std::uint8_t>>> runs;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    for (const auto& args : pipeline) {
      std::ostringstream out, err;
      if (cli::run_command(args, out, err) != cli::kExitOk) return {false, args[0] + " failed: " + err.str()};
    }
    runs.push_back(snapshot(dir));
  }
  fs::remove_all(dir);
  std::size_t differ = 0;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) ++differ;
  }
  const bool same = differ == 0 && runs[0].size() == runs[1].size();
  return {same, std::to_string(runs[0].size()) + " artifacts from gen/pretrain/train/eval, " +
                    (same ? "byte-identical across two runs" : std::to_string(differ) + " DIFFER")};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)();
};

const std::vector<Criterion> kCriteria{
    {1, "gradient fidelity", gradient_fidelity},
    {2, "normalization invariants", normalization},
    {3, "freeze and stop-gradient contract", freeze_contract},
    {4, "edge strength range and oracle", edge_strength_oracle},
    {5, "pretraining efficacy", pretraining},
    {6, "end-to-end learning", end_to_end},
    {7, "ablation direction", ablation},
    {8, "metric exactness", metric_exactness},
    {9, "format round-trips", round_trips},
    {10, "determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) ids.push_back(std::atoi(argv[i]));
  if (ids.empty())
    for (const auto& c : kCriteria) ids.push_back(c.id);
  bool all = true;
  for (const int id : ids) {
    const auto it = std::find_if(kCriteria.begin(), kCriteria.end(), [&](const Criterion& c) { return c.id == id; });
    if (it == kCriteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", id);
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = it->run();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    all = all && r.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", r.pass ? "PASS" : "FAIL", id, it->name, r.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
