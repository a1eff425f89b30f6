#include "x2f/eventdom/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "x2f/autodiff/layers.hpp"
#include "x2f/autodiff/ops.hpp"
#include "x2f/error.hpp"

namespace x2f::events {

namespace o = ad::ops;

namespace {

void check_window(const EventStream& s, const char* op) {
  if (!(s.t_end > s.t_start)) {
    throw ConfigError(std::string(op) + ": window end " + std::to_string(s.t_end) + " not after start " +
                      std::to_string(s.t_start));
  }
  if (s.height == 0 || s.width == 0) throw ConfigError(std::string(op) + ": sensor extent is zero");
}

void check_event(const EventStream& s, std::size_t i, bool closed_end, bool ordered, const char* op) {
  const Event& e = s.events[i];
  const bool t_ok = e.t >= s.t_start && (closed_end ? e.t <= s.t_end : e.t < s.t_end);
  if (!t_ok) throw ConfigError(std::string(op) + ": event " + std::to_string(i) + " at t=" +
                               std::to_string(e.t) + " lies outside the window");
  if (e.x < 0 || e.y < 0 || static_cast<std::size_t>(e.x) >= s.width ||
      static_cast<std::size_t>(e.y) >= s.height) {
    throw ConfigError(std::string(op) + ": event " + std::to_string(i) + " at (" + std::to_string(e.x) + ", " +
                      std::to_string(e.y) + ") outside sensor " + std::to_string(s.width) + "x" +
                      std::to_string(s.height));
  }
  if (e.p != 1 && e.p != -1) {
    throw ConfigError(std::string(op) + ": event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
  }
  if (ordered && i > 0 && e.t < s.events[i - 1].t) {
    throw ConfigError(std::string(op) + ": event " + std::to_string(i) + " is out of time order");
  }
}

}  // namespace

void EventStream::validate() const {
  check_window(*this, "event stream");
  for (std::size_t i = 0; i < events.size(); ++i) check_event(*this, i, false, true, "event stream");
}

ad::Tensor EdgeMap::tensor() const { return ad::Tensor::constant({1, height, width}, values); }

ad::Tensor voxelize(const EventStream& stream, std::size_t bins) {
  if (bins == 0) throw ConfigError("voxelize: bin count must be >= 1");
  stream.validate();
  const std::size_t h = stream.height, w = stream.width;
  std::vector<double> grid(2 * bins * h * w, 0.0);
  const double len = stream.t_end - stream.t_start;
  for (const Event& e : stream.events) {
    auto b = static_cast<std::size_t>(std::floor(static_cast<double>(bins) * (e.t - stream.t_start) / len));
    b = std::min(b, bins - 1);
    const std::size_t c = e.p > 0 ? 1 : 0;
    grid[((c * bins + b) * h + e.y) * w + e.x] += 1.0;
  }
  return ad::Tensor::constant({2, bins, h, w}, std::move(grid));
}

EdgeMap edge_strength(const EventStream& stream) {
  check_window(stream, "edge_strength");
  for (std::size_t i = 0; i < stream.events.size(); ++i) check_event(stream, i, true, false, "edge_strength");
  const std::size_t n = stream.height * stream.width;
  std::vector<std::size_t> count(n, 0);
  std::vector<double> mean(n, 0.0);
  // Times relative to the window start keep the result translation invariant.
  for (const Event& e : stream.events) {
    const std::size_t k = e.y * stream.width + e.x;
    ++count[k];
    mean[k] += e.t - stream.t_start;
  }
  std::size_t max_count = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (count[k]) mean[k] /= static_cast<double>(count[k]);
    max_count = std::max(max_count, count[k]);
  }
  std::vector<double> var(n, 0.0);
  for (const Event& e : stream.events) {
    const std::size_t k = e.y * stream.width + e.x;
    const double d = (e.t - stream.t_start) - mean[k];
    var[k] += d * d;
  }
  const double half = 0.5 * (stream.t_end - stream.t_start);
  EdgeMap out{stream.height, stream.width, 0, std::vector<double>(n, 0.0)};
  if (max_count == 0) return out;
  for (std::size_t k = 0; k < n; ++k) {
    if (!count[k]) continue;
    const double activity = static_cast<double>(count[k]) / static_cast<double>(max_count);
    double spread = 0.0;
    if (count[k] >= 2) spread = std::clamp(var[k] / static_cast<double>(count[k]) / (half * half), 0.0, 1.0);
    out.values[k] = activity * (1.0 - spread);
  }
  return out;
}

EdgeMap pool_edge(const EdgeMap& e, std::size_t scale) {
  const std::size_t stride = scale_stride(scale);
  if (e.height % stride || e.width % stride) {
    throw ShapeError("pool_edge: extent " + std::to_string(e.height) + "x" + std::to_string(e.width) +
                     " not divisible by stride " + std::to_string(stride));
  }
  const std::size_t ho = e.height / stride, wo = e.width / stride;
  EdgeMap out{ho, wo, e.scale + scale, std::vector<double>(ho * wo, 0.0)};
  const double inv = 1.0 / static_cast<double>(stride * stride);
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      // Shifted mean: exact on constant blocks.
      const double ref = e.at(i * stride, j * stride);
      double acc = 0.0;
      for (std::size_t a = 0; a < stride; ++a)
        for (std::size_t b = 0; b < stride; ++b) acc += e.at(i * stride + a, j * stride + b) - ref;
      out.values[i * wo + j] = std::clamp(ref + acc * inv, 0.0, 1.0);
    }
  return out;
}

std::pair<EventStream, EventStream> split_window(const EventStream& stream) {
  check_window(stream, "split_window");
  const double mid = 0.5 * (stream.t_start + stream.t_end);
  EventStream past{{}, stream.t_start, mid, stream.height, stream.width};
  EventStream future{{}, mid, stream.t_end, stream.height, stream.width};
  for (const Event& e : stream.events) (e.t < mid ? past : future).events.push_back(e);
  return {std::move(past), std::move(future)};
}

EventEncoder EventEncoder::init(ad::Rng& rng) {
  EventEncoder enc;
  std::size_t cin = 2;
  for (std::size_t s = 1; s <= kNumScales; ++s) {
    const std::size_t c = kScaleChannels[s - 1];
    ad::add_conv3d(enc.params, rng, "conv" + std::to_string(s), c, cin, 3);
    ad::add_conv2d(enc.params, rng, "head" + std::to_string(s), 1, c, 1);
    cin = c;
  }
  return enc;
}

namespace {

std::vector<ad::Tensor> encode_impl(const ad::Tensor& voxels, const EventEncoder& enc) {
  if (voxels.rank() != 4 || voxels.dim(0) != 2) {
    throw ShapeError("event_encode: expected voxels (2, B, H, W), got " + ad::to_string(voxels.shape()));
  }
  const std::size_t total = scale_stride(kNumScales);
  if (voxels.dim(2) % total || voxels.dim(3) % total) {
    throw ShapeError("event_encode: extent underflow, " + std::to_string(voxels.dim(2)) + "x" +
                     std::to_string(voxels.dim(3)) + " not divisible by " + std::to_string(total));
  }
  o::Conv3dParams p;
  p.stride = {1, 2, 2};
  p.pad = {1, 1, 1};
  std::vector<ad::Tensor> pyramid;
  ad::Tensor x = voxels;
  for (std::size_t s = 1; s <= kNumScales; ++s) {
    x = o::relu(ad::conv3d_layer(enc.params, "conv" + std::to_string(s), x, p));
    pyramid.push_back(o::mean(x, {1}));
  }
  return pyramid;
}

}  // namespace

std::vector<ad::Tensor> event_encode(const ad::Tensor& voxels, const EventEncoder& enc) {
  if (!enc.frozen) return encode_impl(voxels, enc);
  std::vector<ad::Tensor> pyramid;
  {
    ad::NoGradGuard guard;
    pyramid = encode_impl(voxels, enc);
  }
  for (auto& f : pyramid) f = o::stop_gradient(f);
  return pyramid;
}

ad::Tensor edge_head(const EventEncoder& enc, std::size_t scale, const ad::Tensor& features) {
  return o::sigmoid(ad::conv2d_layer(enc.params, "head" + std::to_string(scale), features));
}

ad::Tensor edge_l1_loss(const std::vector<ad::Tensor>& predictions, const std::vector<EdgeMap>& targets,
                        const std::array<double, kNumScales>& lambdas) {
  if (predictions.size() != kNumScales || targets.size() != kNumScales) {
    throw ShapeError("edge_pretrain_loss: expected " + std::to_string(kNumScales) + " scales, got " +
                     std::to_string(predictions.size()) + " predictions and " + std::to_string(targets.size()) +
                     " targets");
  }
  ad::Tensor total;
  for (std::size_t i = 0; i < kNumScales; ++i) {
    if (!(lambdas[i] > 0.0)) throw ConfigError("edge_pretrain_loss: lambda must be > 0");
    const ad::Tensor target = targets[i].tensor();
    if (predictions[i].shape() != target.shape()) {
      throw ShapeError("edge_pretrain_loss: scale " + std::to_string(i + 1) + " prediction " +
                       ad::to_string(predictions[i].shape()) + " vs target " + ad::to_string(target.shape()));
    }
    const auto diff = o::sub(predictions[i], target);
    const auto term = o::scale(o::mean(o::abs_sum(o::reshape(diff, {diff.numel(), 1}), 1)), lambdas[i]);
    total = total.defined() ? o::add(total, term) : term;
  }
  return total;
}

ad::Tensor edge_pretrain_loss(const std::vector<ad::Tensor>& pyr_past, const std::vector<EdgeMap>& e_future,
                              const EventEncoder& enc, const std::array<double, kNumScales>& lambdas) {
  if (pyr_past.size() != kNumScales) {
    throw ShapeError("edge_pretrain_loss: pyramid has " + std::to_string(pyr_past.size()) + " scales");
  }
  std::vector<ad::Tensor> preds;
  for (std::size_t s = 1; s <= kNumScales; ++s) preds.push_back(edge_head(enc, s, pyr_past[s - 1]));
  return edge_l1_loss(preds, e_future, lambdas);
}

void write_events_csv(const std::filesystem::path& path, const EventStream& stream) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << "t,x,y,p\n";
  char buf[64];
  for (const Event& e : stream.events) {
    std::snprintf(buf, sizeof buf, "%.17g", e.t);
    os << buf << ',' << e.x << ',' << e.y << ',' << e.p << '\n';
  }
  if (!os) throw FormatError("write failed for " + path.string());
}

EventStream read_events_csv(const std::filesystem::path& path, double t_start, double t_end, std::size_t height,
                            std::size_t width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  EventStream s{{}, t_start, t_end, height, width};
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || line != "t,x,y,p") {
    throw FormatError(path.string() + ":1: expected header \"t,x,y,p\"");
  }
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    Event e;
    const char* p = line.data();
    const char* end = p + line.size();
    auto bad = [&] { return FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed event row"); };
    auto r = std::from_chars(p, end, e.t);
    if (r.ec != std::errc() || r.ptr == end || *r.ptr != ',') throw bad();
    r = std::from_chars(r.ptr + 1, end, e.x);
    if (r.ec != std::errc() || r.ptr == end || *r.ptr != ',') throw bad();
    r = std::from_chars(r.ptr + 1, end, e.y);
    if (r.ec != std::errc() || r.ptr == end || *r.ptr != ',') throw bad();
    r = std::from_chars(r.ptr + 1, end, e.p);
    if (r.ec != std::errc() || r.ptr != end) throw bad();
    s.events.push_back(e);
  }
  try {
    s.validate();
  } catch (const ConfigError& err) {
    throw FormatError(path.string() + ": " + err.what());
  }
  return s;
}

}  // namespace x2f::events
