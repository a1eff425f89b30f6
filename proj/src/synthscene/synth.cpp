#include "x2f/synthscene/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "x2f/autodiff/random.hpp"
#include "x2f/error.hpp"
#include "x2f/io/formats.hpp"

namespace x2f::synth {

using nlohmann::json;

namespace {

constexpr std::size_t kSuper = 4;       // supersamples per pixel axis
constexpr double kEdgeMargin = 1.0;     // px kept free at the frame border
constexpr double kObjectShare = 0.7;    // share of LiDAR points on objects

enc::Vec3 center_at(const ObjectSpec& o, double t) {
  return {o.center[0] + o.velocity[0] * t, o.center[1] + o.velocity[1] * t, o.center[2] + o.velocity[2] * t};
}

bool on_plate(const ObjectSpec& o, double dx, double dy) {
  if (o.shape == ShapeKind::kRect) return std::abs(dx) <= o.half_w && std::abs(dy) <= o.half_h;
  return dx * dx + dy * dy <= o.half_w * o.half_w;
}

double half_h_of(const ObjectSpec& o) { return o.shape == ShapeKind::kRect ? o.half_h : o.half_w; }

double texture(const ObjectSpec& o, double dx, double dy) {
  const auto ix = static_cast<long>(std::floor((dx + o.phase_x) / o.cell));
  const auto iy = static_cast<long>(std::floor((dy + o.phase_y) / o.cell));
  return ((ix + iy) & 1) ? o.dark : o.bright;
}

struct Box {
  double u0, u1, v0, v1;
};

Box project_box(const enc::CameraModel& cam, const ObjectSpec& o, double t) {
  const auto c = center_at(o, t);
  const double hh = half_h_of(o);
  return {cam.fx * (c[0] - o.half_w) / c[2] + cam.cx, cam.fx * (c[0] + o.half_w) / c[2] + cam.cx,
          cam.fy * (c[1] - hh) / c[2] + cam.cy, cam.fy * (c[1] + hh) / c[2] + cam.cy};
}

Box swept_box(const SceneSpec& s, const ObjectSpec& o) {
  Box b = project_box(s.camera, o, 0.0);
  for (std::size_t k = 1; k <= s.substeps; ++k) {
    const Box q = project_box(s.camera, o, s.dt * static_cast<double>(k) / static_cast<double>(s.substeps));
    b = {std::min(b.u0, q.u0), std::max(b.u1, q.u1), std::min(b.v0, q.v0), std::max(b.v1, q.v1)};
  }
  return b;
}

// Index of the nearest object covering pixel coordinate (u, v) at time t, or -1.
int hit(const SceneSpec& s, double u, double v, double t, double* value) {
  int best = -1;
  double best_z = 0.0;
  for (std::size_t m = 0; m < s.objects.size(); ++m) {
    const auto& o = s.objects[m];
    const auto c = center_at(o, t);
    const double x = (u - s.camera.cx) * c[2] / s.camera.fx;
    const double y = (v - s.camera.cy) * c[2] / s.camera.fy;
    if (!on_plate(o, x - c[0], y - c[1])) continue;
    if (best < 0 || c[2] < best_z) {
      best = static_cast<int>(m);
      best_z = c[2];
      if (value) *value = texture(o, x - c[0], y - c[1]);
    }
  }
  return best;
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::vector<double> quantize(const std::vector<double>& img) {
  std::vector<double> out(img.size());
  std::transform(img.begin(), img.end(), out.begin(), quantize8);
  return out;
}

}  // namespace

void SceneSpec::validate() const {
  camera.validate();
  if (!(dt > 0.0)) throw ConfigError("scene: dt must be positive");
  if (substeps == 0) throw ConfigError("scene: substeps must be >= 1");
  if (!(contrast > 0.0)) throw ConfigError("scene: contrast threshold must be positive");
  if (n_points < 8) throw ConfigError("scene: need at least 8 LiDAR points");
  if (objects.empty() || objects.size() > 4) throw ConfigError("scene: object count must be 1-4");
  std::vector<Box> boxes;
  for (std::size_t m = 0; m < objects.size(); ++m) {
    const auto& o = objects[m];
    const std::string id = "scene: object " + std::to_string(m);
    if (!(o.center[2] >= 2.0 && o.center[2] <= 6.0)) throw ConfigError(id + " depth outside [2, 6] m");
    if (!(o.center[2] + o.velocity[2] * dt > 0.5)) throw ConfigError(id + " approaches the camera plane");
    if (!(o.half_w > 0.0) || !(half_h_of(o) > 0.0) || !(o.cell > 0.0)) throw ConfigError(id + " has zero extent");
    if (!(o.dark > 0.0 && o.bright <= 1.0 && o.dark <= 1.0 && o.bright > 0.0)) {
      throw ConfigError(id + " texture intensities outside (0, 1]");
    }
    const Box b = swept_box(*this, o);
    if (b.u0 < kEdgeMargin || b.v0 < kEdgeMargin || b.u1 > static_cast<double>(camera.width) - kEdgeMargin ||
        b.v1 > static_cast<double>(camera.height) - kEdgeMargin) {
      throw ConfigError(id + " exits the frustum");
    }
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const Box& q = boxes[k];
      const bool apart = b.u1 + 1.0 <= q.u0 || q.u1 + 1.0 <= b.u0 || b.v1 + 1.0 <= q.v0 || q.v1 + 1.0 <= b.v0;
      if (!apart) throw ConfigError(id + " overlaps object " + std::to_string(k));
    }
    boxes.push_back(b);
  }
}

SceneSpec random_spec(std::uint64_t seed, const enc::CameraModel& cam) {
  SceneSpec spec;
  spec.seed = seed;
  spec.camera = cam;
  ad::Rng rng(ad::derive_seed(seed, 1));
  const std::size_t want = 1 + rng.index(4);
  const double w = static_cast<double>(cam.width), h = static_cast<double>(cam.height);
  for (std::size_t m = 0; m < want; ++m) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      ObjectSpec o;
      o.shape = rng.uniform() < 0.5 ? ShapeKind::kRect : ShapeKind::kDisk;
      const double z = rng.uniform(2.0, 6.0);
      const double hw_px = rng.uniform(3.0, 7.0), hh_px = rng.uniform(3.0, 7.0);
      o.half_w = hw_px * z / cam.fx;
      o.half_h = (o.shape == ShapeKind::kRect ? hh_px : hw_px) * z / cam.fy;
      const double hy_px = o.shape == ShapeKind::kRect ? hh_px : hw_px;
      const double uc = rng.uniform(hw_px + 1.0, w - hw_px - 1.0);
      const double vc = rng.uniform(hy_px + 1.0, h - hy_px - 1.0);
      o.center = {(uc - cam.cx) * z / cam.fx, (vc - cam.cy) * z / cam.fy, z};
      const double mag = rng.uniform(0.0, 3.5), ang = rng.uniform(0.0, 2.0 * M_PI);
      o.velocity = {mag * std::cos(ang) * z / (cam.fx * spec.dt), mag * std::sin(ang) * z / (cam.fy * spec.dt),
                    rng.uniform(-0.3, 0.3)};
      o.cell = rng.uniform(2.0, 4.0) * z / cam.fx;
      o.phase_x = rng.uniform(0.0, o.cell);
      o.phase_y = rng.uniform(0.0, o.cell);
      o.bright = rng.uniform(0.6, 1.0);
      o.dark = o.bright * rng.uniform(0.3, 0.55);
      spec.objects.push_back(o);
      try {
        spec.validate();
        break;
      } catch (const ConfigError&) {
        spec.objects.pop_back();
      }
    }
  }
  if (spec.objects.empty()) throw ConfigError("random_spec: could not place any object for seed " + std::to_string(seed));
  return spec;
}

std::vector<double> render(const SceneSpec& spec, double t, std::vector<int>* labels) {
  const std::size_t h = spec.camera.height, w = spec.camera.width;
  std::vector<double> img(h * w, kBackground);
  if (labels) labels->assign(h * w, -1);
  const double inv = 1.0 / static_cast<double>(kSuper * kSuper);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < kSuper; ++a)
        for (std::size_t b = 0; b < kSuper; ++b) {
          const double u = static_cast<double>(j) + (static_cast<double>(b) + 0.5) / kSuper;
          const double v = static_cast<double>(i) + (static_cast<double>(a) + 0.5) / kSuper;
          double value = kBackground;
          hit(spec, u, v, t, &value);
          acc += value;
        }
      img[i * w + j] = acc * inv;
      if (labels) (*labels)[i * w + j] = hit(spec, j + 0.5, i + 0.5, t, nullptr);
    }
  return img;
}

events::EventStream simulate_events(const std::vector<std::vector<double>>& frames, std::size_t height,
                                    std::size_t width, double t_start, double t_end, double contrast) {
  if (frames.size() < 2) throw ConfigError("simulate_events: need at least two frames");
  if (!(contrast > 0.0)) throw ConfigError("simulate_events: contrast must be positive");
  if (!(t_end > t_start)) throw ConfigError("simulate_events: empty window");
  const std::size_t n = height * width;
  for (const auto& f : frames) {
    if (f.size() != n) throw ShapeError("simulate_events: frame size mismatch");
  }
  const std::size_t steps = frames.size() - 1;
  const double sub = (t_end - t_start) / static_cast<double>(steps);
  auto logi = [](double v) { return std::log(std::max(v, kLogFloor)); };
  std::vector<double> ref(n);
  for (std::size_t k = 0; k < n; ++k) ref[k] = logi(frames[0][k]);
  events::EventStream out{{}, t_start, t_end, height, width};
  const double last = std::nextafter(t_end, t_start);
  for (std::size_t s = 1; s <= steps; ++s) {
    const double ta = t_start + sub * static_cast<double>(s - 1);
    for (std::size_t k = 0; k < n; ++k) {
      const double prev = logi(frames[s - 1][k]), cur = logi(frames[s][k]);
      const double delta = cur - ref[k];
      const auto count = static_cast<long>(std::floor(std::abs(delta) / contrast + 1e-9));
      if (count == 0) continue;
      const int pol = delta > 0 ? 1 : -1;
      for (long c = 1; c <= count; ++c) {
        const double level = ref[k] + pol * contrast * static_cast<double>(c);
        double frac = cur != prev ? (level - prev) / (cur - prev) : 1.0;
        frac = std::clamp(frac, 0.0, 1.0);
        const double t = std::min(ta + frac * sub, last);
        out.events.push_back({t, static_cast<int>(k % width), static_cast<int>(k / width), pol});
      }
      ref[k] += pol * contrast * static_cast<double>(count);
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const events::Event& a, const events::Event& b) { return a.t < b.t; });
  return out;
}

namespace {

// Largest-remainder split of `total` proportional to `weights`.
std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size(), 0);
  if (sum <= 0.0) return out;
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    used += out[i];
    rem.push_back({-(exact - std::floor(exact)), i});
  }
  std::sort(rem.begin(), rem.end());
  for (std::size_t i = 0; used < total; ++i, ++used) ++out[rem[i % rem.size()].second];
  return out;
}

struct Cloud {
  enc::Points points;
  enc::Points flow;
};

Cloud sample_cloud(const SceneSpec& spec, double t, const std::vector<int>& labels,
                   const std::vector<std::size_t>& per_object, std::size_t ground, ad::Rng& rng) {
  const auto& cam = spec.camera;
  Cloud c;
  auto pixel_label = [&](const enc::Vec3& p) {
    const auto [u, v] = cam.project(p);
    if (u < 0.0 || v < 0.0 || u >= static_cast<double>(cam.width) || v >= static_cast<double>(cam.height)) return -2;
    return labels[static_cast<std::size_t>(v) * cam.width + static_cast<std::size_t>(u)];
  };
  for (std::size_t m = 0; m < spec.objects.size(); ++m) {
    const auto& o = spec.objects[m];
    const auto ctr = center_at(o, t);
    const enc::Vec3 step{o.velocity[0] * spec.dt, o.velocity[1] * spec.dt, o.velocity[2] * spec.dt};
    std::size_t got = 0;
    for (std::size_t tries = 0; got < per_object[m]; ++tries) {
      if (tries > 100000) throw Error("synth: cannot place LiDAR points on object " + std::to_string(m));
      const double hh = half_h_of(o);
      const double dx = rng.uniform(-o.half_w, o.half_w), dy = rng.uniform(-hh, hh);
      if (!on_plate(o, dx, dy)) continue;
      const enc::Vec3 p{ctr[0] + dx, ctr[1] + dy, ctr[2]};
      if (pixel_label(p) != static_cast<int>(m)) continue;
      c.points.push_back(p);
      c.flow.push_back(step);
      ++got;
    }
  }
  std::size_t got = 0;
  for (std::size_t tries = 0; got < ground; ++tries) {
    if (tries > 100000) throw Error("synth: cannot place ground points");
    const double z = rng.uniform(kGroundZMin, kGroundZMax);
    const double u = rng.uniform(0.0, static_cast<double>(cam.width));
    const enc::Vec3 p{(u - cam.cx) * z / cam.fx, kGroundY, z};
    if (pixel_label(p) != -1) continue;
    c.points.push_back(p);
    c.flow.push_back({0.0, 0.0, 0.0});
    ++got;
  }
  return c;
}

}  // namespace

Sample generate_sample(const SceneSpec& spec) {
  spec.validate();
  const auto& cam = spec.camera;
  const std::size_t h = cam.height, w = cam.width;
  std::vector<std::vector<double>> frames;
  std::vector<int> labels0, labels1;
  for (std::size_t k = 0; k <= spec.substeps; ++k) {
    const double t = spec.dt * static_cast<double>(k) / static_cast<double>(spec.substeps);
    std::vector<int>* lab = k == 0 ? &labels0 : (k == spec.substeps ? &labels1 : nullptr);
    frames.push_back(render(spec, t, lab));
  }
  Sample s;
  s.seed = spec.seed;
  s.camera = cam;
  s.img0 = quantize(frames.front());
  s.img1 = quantize(frames.back());
  s.events = simulate_events(frames, h, w, 0.0, spec.dt, spec.contrast);

  std::vector<float> flow(2 * h * w, 0.0f);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const int m = labels0[i * w + j];
      if (m < 0) continue;
      const auto& o = spec.objects[m];
      const double u = j + 0.5, v = i + 0.5;
      const double z = o.center[2];
      const enc::Vec3 p{(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z};
      const enc::Vec3 q{p[0] + o.velocity[0] * spec.dt, p[1] + o.velocity[1] * spec.dt, p[2] + o.velocity[2] * spec.dt};
      const auto uv = cam.project(q);
      flow[2 * (i * w + j)] = static_cast<float>(uv[0] - u);
      flow[2 * (i * w + j) + 1] = static_cast<float>(uv[1] - v);
    }
  s.flow2d.assign(flow.begin(), flow.end());

  std::vector<double> area(spec.objects.size(), 0.0);
  for (int m : labels0)
    if (m >= 0) area[m] += 1.0;
  const auto on_objects = static_cast<std::size_t>(std::round(kObjectShare * static_cast<double>(spec.n_points)));
  const auto per_object = apportion(area, on_objects);
  const std::size_t ground = spec.n_points - std::accumulate(per_object.begin(), per_object.end(), std::size_t{0});
  ad::Rng r0(ad::derive_seed(spec.seed, 2)), r1(ad::derive_seed(spec.seed, 3));
  auto c0 = sample_cloud(spec, 0.0, labels0, per_object, ground, r0);
  auto c1 = sample_cloud(spec, spec.dt, labels1, per_object, ground, r1);
  s.points0 = std::move(c0.points);
  s.flow3d = std::move(c0.flow);
  s.points1 = std::move(c1.points);
  return s;
}

std::vector<Sample> generate_dataset(std::uint64_t seed, std::size_t n, const enc::CameraModel& cam) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(random_spec(ad::derive_seed(seed, 100 + i), cam)));
  return out;
}

Sample degrade(const Sample& s, const std::string& kind, int severity) {
  if (severity < 1 || severity > 3) throw ConfigError("degrade: severity must be 1-3, got " + std::to_string(severity));
  const std::size_t k = static_cast<std::size_t>(severity - 1);
  Sample out = s;
  auto expose = [&](double alpha, double gamma) {
    for (auto* img : {&out.img0, &out.img1})
      for (double& v : *img) v = quantize8(std::min(1.0, alpha * std::pow(v, gamma)));
  };
  auto rng_for = [&](std::uint64_t stream) { return ad::Rng(ad::derive_seed(s.seed, 100 + 10 * stream + k)); };
  if (kind == "low-exposure") {
    const double a[3] = {0.5, 0.3, 0.15}, g[3] = {1.3, 1.5, 1.8};
    expose(a[k], g[k]);
  } else if (kind == "high-exposure") {
    const double a[3] = {1.4, 1.8, 2.4}, g[3] = {0.8, 0.7, 0.6};
    expose(a[k], g[k]);
  } else if (kind == "sparse-lidar") {
    const double ratio[3] = {0.5, 0.25, 0.1};
    ad::Rng rng = rng_for(1);
    auto keep_rows = [&](std::size_t n) {
      const auto keep = static_cast<std::size_t>(std::round(ratio[k] * static_cast<double>(n)));
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
      idx.resize(keep);
      std::sort(idx.begin(), idx.end());
      return idx;
    };
    const auto k0 = keep_rows(s.points0.size());
    const auto k1 = keep_rows(s.points1.size());
    out.points0.clear();
    out.flow3d.clear();
    out.points1.clear();
    for (std::size_t i : k0) {
      out.points0.push_back(s.points0[i]);
      out.flow3d.push_back(s.flow3d[i]);
    }
    for (std::size_t i : k1) out.points1.push_back(s.points1[i]);
  } else if (kind == "drift-lidar") {
    const double sigma[3] = {0.05, 0.10, 0.20};
    ad::Rng rng = rng_for(2);
    for (auto* pts : {&out.points0, &out.points1})
      for (auto& p : *pts)
        for (double& c : p) c += sigma[k] * rng.normal();
    // Keep every point in front of the camera.
    for (auto* pts : {&out.points0, &out.points1})
      for (auto& p : *pts) p[2] = std::max(p[2], 0.1);
  } else {
    throw ConfigError("degrade: unknown kind '" + kind + "'");
  }
  out.degradations.push_back({kind, severity});
  return out;
}

namespace {

io::Gray8 to_gray(const std::vector<double>& img, std::size_t h, std::size_t w) {
  io::Gray8 g{h, w, std::vector<std::uint8_t>(h * w)};
  for (std::size_t i = 0; i < img.size(); ++i) g.pixels[i] = static_cast<std::uint8_t>(std::lround(img[i] * 255.0));
  return g;
}

std::vector<double> from_gray(const io::Gray8& g) {
  std::vector<double> v(g.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = g.pixels[i] / 255.0;
  return v;
}

}  // namespace

void write_sample(const std::filesystem::path& dir, const Sample& s) {
  std::filesystem::create_directories(dir);
  const auto& cam = s.camera;
  io::write_pgm(dir / "img0.pgm", to_gray(s.img0, cam.height, cam.width));
  io::write_pgm(dir / "img1.pgm", to_gray(s.img1, cam.height, cam.width));
  events::write_events_csv(dir / "events.csv", s.events);
  io::write_xyz_csv(dir / "points0.csv", "x,y,z", s.points0);
  io::write_xyz_csv(dir / "points1.csv", "x,y,z", s.points1);
  io::Flow2D f{cam.height, cam.width, std::vector<float>(s.flow2d.begin(), s.flow2d.end())};
  io::write_flo(dir / "flow2d_gt.flo", f);
  io::write_xyz_csv(dir / "flow3d_gt.csv", "dx,dy,dz", s.flow3d);
  json degr = json::array();
  for (const auto& d : s.degradations) degr.push_back({{"kind", d.kind}, {"severity", d.severity}});
  json m = {{"seed", s.seed},
            {"camera",
             {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy}, {"height", cam.height}, {"width", cam.width}}},
            {"window", {{"t_start", s.events.t_start}, {"t_end", s.events.t_end}}},
            {"n_points0", s.points0.size()},
            {"n_points1", s.points1.size()},
            {"degradations", degr}};
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Sample read_sample(const std::filesystem::path& dir) {
  json m;
  try {
    m = json::parse(io::read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  Sample s;
  try {
    s.seed = m.at("seed").get<std::uint64_t>();
    const auto& c = m.at("camera");
    s.camera.fx = c.at("fx").get<double>();
    s.camera.fy = c.at("fy").get<double>();
    s.camera.cx = c.at("cx").get<double>();
    s.camera.cy = c.at("cy").get<double>();
    s.camera.height = c.at("height").get<std::size_t>();
    s.camera.width = c.at("width").get<std::size_t>();
    const double t0 = m.at("window").at("t_start").get<double>();
    const double t1 = m.at("window").at("t_end").get<double>();
    for (const auto& d : m.at("degradations")) {
      s.degradations.push_back({d.at("kind").get<std::string>(), d.at("severity").get<int>()});
    }
    s.events = events::read_events_csv(dir / "events.csv", t0, t1, s.camera.height, s.camera.width);
  } catch (const json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  s.camera.validate();
  const auto g0 = io::read_pgm(dir / "img0.pgm"), g1 = io::read_pgm(dir / "img1.pgm");
  if (g0.height != s.camera.height || g0.width != s.camera.width || g1.height != g0.height || g1.width != g0.width) {
    throw FormatError(dir.string() + ": image extent disagrees with the manifest camera");
  }
  s.img0 = from_gray(g0);
  s.img1 = from_gray(g1);
  s.points0 = io::read_xyz_csv(dir / "points0.csv", "x,y,z");
  s.points1 = io::read_xyz_csv(dir / "points1.csv", "x,y,z");
  s.flow3d = io::read_xyz_csv(dir / "flow3d_gt.csv", "dx,dy,dz");
  if (s.flow3d.size() != s.points0.size()) throw FormatError(dir.string() + ": flow3d_gt rows differ from points0");
  const auto f = io::read_flo(dir / "flow2d_gt.flo");
  if (f.height != s.camera.height || f.width != s.camera.width) {
    throw FormatError(dir.string() + ": flow2d_gt extent disagrees with the manifest camera");
  }
  s.flow2d.assign(f.uv.begin(), f.uv.end());
  return s;
}

void write_dataset(const std::filesystem::path& root, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(root);
  std::string index;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu", i);
    write_sample(root / name, samples[i]);
    index += std::string(name) + "\n";
  }
  io::write_text(root / "index.txt", index);
}

std::vector<std::filesystem::path> read_index(const std::filesystem::path& root) {
  const auto text = io::read_text(root / "index.txt");
  std::vector<std::filesystem::path> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(root / line);
    start = end + 1;
  }
  return out;
}

}  // namespace x2f::synth
