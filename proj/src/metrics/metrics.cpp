#include "x2f/metrics/metrics.hpp"

#include <cmath>

#include "x2f/error.hpp"

namespace x2f::metrics {

Metrics2D flow_metrics_2d(std::span<const float> pred, std::span<const double> gt, std::span<const bool> mask) {
  if (pred.size() != gt.size() || pred.size() % 2) {
    throw ShapeError("flow_metrics_2d: prediction holds " + std::to_string(pred.size()) + " values, ground truth " +
                     std::to_string(gt.size()));
  }
  const std::size_t n = pred.size() / 2;
  if (!mask.empty() && mask.size() != n) throw ShapeError("flow_metrics_2d: mask extent disagrees with the field");
  Metrics2D m;
  std::size_t count = 0, inlier = 0, outlier = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double du = pred[2 * i] - gt[2 * i], dv = pred[2 * i + 1] - gt[2 * i + 1];
    const double e = std::hypot(du, dv);
    const double g = std::hypot(gt[2 * i], gt[2 * i + 1]);
    m.epe += e;
    if (e < 1.0) ++inlier;
    if (e > 3.0 && e > 0.05 * g) ++outlier;
    ++count;
  }
  if (count == 0) throw ConfigError("flow_metrics_2d: empty mask");
  const double c = static_cast<double>(count);
  m.epe /= c;
  m.acc1px = static_cast<double>(inlier) / c;
  m.fl = static_cast<double>(outlier) / c;
  return m;
}

Metrics3D flow_metrics_3d(const enc::Points& pred, const enc::Points& gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("flow_metrics_3d: " + std::to_string(pred.size()) + " predicted rows vs " +
                     std::to_string(gt.size()) + " ground-truth rows");
  }
  if (gt.empty()) throw ConfigError("flow_metrics_3d: empty point set");
  Metrics3D m;
  std::size_t a05 = 0, a10 = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double dx = pred[i][0] - gt[i][0], dy = pred[i][1] - gt[i][1], dz = pred[i][2] - gt[i][2];
    const double e = std::sqrt(dx * dx + dy * dy + dz * dz);
    m.epe += e;
    if (e < 0.05) ++a05;
    if (e < 0.10) ++a10;
  }
  const double c = static_cast<double>(gt.size());
  m.epe /= c;
  m.acc05 = static_cast<double>(a05) / c;
  m.acc10 = static_cast<double>(a10) / c;
  return m;
}

namespace {

void blend(EvalReport& r, const Metrics2D& m2, const Metrics3D& m3) {
  const double k = static_cast<double>(r.samples);
  const auto upd = [k](double& acc, double v) { acc = (acc * k + v) / (k + 1.0); };
  upd(r.epe2d, m2.epe);
  upd(r.acc1px, m2.acc1px);
  upd(r.fl, m2.fl);
  upd(r.epe3d, m3.epe);
  upd(r.acc05, m3.acc05);
  upd(r.acc10, m3.acc10);
  ++r.samples;
}

nlohmann::json fields(const EvalReport& r) {
  return {{"epe2d", r.epe2d}, {"acc1px", r.acc1px}, {"fl", r.fl},          {"epe3d", r.epe3d},
          {"acc05", r.acc05}, {"acc10", r.acc10},   {"samples", r.samples}};
}

}  // namespace

void EvalReport::add(const Metrics2D& m2, const Metrics3D& m3, const std::string& degradation) {
  blend(*this, m2, m3);
  if (!degradation.empty()) blend(by_degradation[degradation], m2, m3);
}

nlohmann::json EvalReport::to_json() const {
  auto j = fields(*this);
  j["by_degradation"] = nlohmann::json::object();
  for (const auto& [k, v] : by_degradation) j["by_degradation"][k] = fields(v);
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  for (const char* key : {"epe2d", "acc1px", "fl", "epe3d", "acc05", "acc10", "samples"}) {
    if (!j.contains(key)) throw FormatError(std::string("report: missing field '") + key + "'");
  }
  r.epe2d = j.at("epe2d").get<double>();
  r.acc1px = j.at("acc1px").get<double>();
  r.fl = j.at("fl").get<double>();
  r.epe3d = j.at("epe3d").get<double>();
  r.acc05 = j.at("acc05").get<double>();
  r.acc10 = j.at("acc10").get<double>();
  r.samples = j.at("samples").get<std::size_t>();
  if (j.contains("by_degradation")) {
    for (const auto& [k, v] : j.at("by_degradation").items()) r.by_degradation[k] = from_json(v);
  }
  return r;
}

}  // namespace x2f::metrics
