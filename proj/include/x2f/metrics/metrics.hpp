#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "x2f/encoders/encoders.hpp"

namespace x2f::metrics {

struct Metrics2D {
  double epe = 0.0;
  double acc1px = 0.0;
  double fl = 0.0;
};

struct Metrics3D {
  double epe = 0.0;
  double acc05 = 0.0;
  double acc10 = 0.0;
};

// Interleaved (u, v) fields of equal length; mask holds one flag per pixel
// (empty = every pixel).
Metrics2D flow_metrics_2d(std::span<const float> pred, std::span<const double> gt, std::span<const bool> mask = {});
Metrics3D flow_metrics_3d(const enc::Points& pred, const enc::Points& gt);

// Sample-weighted accumulator: pixel and point means are averaged per sample.
struct EvalReport {
  double epe2d = 0.0;
  double acc1px = 0.0;
  double fl = 0.0;
  double epe3d = 0.0;
  double acc05 = 0.0;
  double acc10 = 0.0;
  std::size_t samples = 0;
  std::map<std::string, EvalReport> by_degradation;

  void add(const Metrics2D& m2, const Metrics3D& m3, const std::string& degradation = "");
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

}  // namespace x2f::metrics
