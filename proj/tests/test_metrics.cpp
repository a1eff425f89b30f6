#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "x2f/autodiff/random.hpp"
#include "x2f/error.hpp"
#include "x2f/metrics/metrics.hpp"

using namespace x2f;
using namespace x2f::metrics;

TEST_CASE("2D flow metrics") {
  SUBCASE("perfect prediction") {
    const std::vector<double> gt{1.0, 2.0, -3.0, 0.5};
    const std::vector<float> pred{1.0f, 2.0f, -3.0f, 0.5f};
    const auto m = flow_metrics_2d(pred, gt);
    CHECK(m.epe == 0.0);
    CHECK(m.acc1px == 1.0);
    CHECK(m.fl == 0.0);
  }
  SUBCASE("outlier on both clauses") {
    const auto m = flow_metrics_2d(std::vector<float>{0.0f, 0.0f}, std::vector<double>{3.0, 4.0});
    CHECK(m.epe == 5.0);
    CHECK(m.fl == 1.0);
    CHECK(m.acc1px == 0.0);
  }
  SUBCASE("large motion filters the relative clause") {
    const auto m = flow_metrics_2d(std::vector<float>{96.0f, 0.0f}, std::vector<double>{100.0, 0.0});
    CHECK(m.epe == 4.0);
    CHECK(m.fl == 0.0);
  }
  SUBCASE("mask restricts the pixels") {
    const std::vector<float> pred{0.0f, 0.0f, 0.0f, 0.0f};
    const std::vector<double> gt{3.0, 4.0, 0.0, 0.5};
    const bool mask[2] = {false, true};
    const auto m = flow_metrics_2d(pred, gt, mask);
    CHECK(m.epe == 0.5);
    CHECK(m.acc1px == 1.0);
    const bool none[2] = {false, false};
    CHECK_THROWS_AS(flow_metrics_2d(pred, gt, none), ConfigError);
    CHECK_THROWS_AS(flow_metrics_2d(std::vector<float>{0.0f, 0.0f}, gt), ShapeError);
  }
  SUBCASE("zero-flow baseline equals the mean ground-truth magnitude") {
    ad::Rng rng(3);
    std::vector<double> gt(200);
    for (double& v : gt) v = static_cast<double>(static_cast<float>(rng.uniform(-4, 4)));
    double mean = 0.0;
    for (std::size_t i = 0; i < 100; ++i) mean += std::hypot(gt[2 * i], gt[2 * i + 1]);
    mean /= 100.0;
    CHECK(flow_metrics_2d(std::vector<float>(200, 0.0f), gt).epe == mean);
  }
  SUBCASE("pixel order does not matter") {
    ad::Rng rng(4);
    std::vector<double> gt(60);
    std::vector<float> pred(60);
    for (std::size_t i = 0; i < 60; ++i) {
      gt[i] = rng.uniform(-5, 5);
      pred[i] = static_cast<float>(rng.uniform(-5, 5));
    }
    const auto a = flow_metrics_2d(pred, gt);
    std::vector<double> gt2(60);
    std::vector<float> pred2(60);
    for (std::size_t i = 0; i < 30; ++i) {
      const std::size_t j = (i * 7) % 30;
      gt2[2 * j] = gt[2 * i];
      gt2[2 * j + 1] = gt[2 * i + 1];
      pred2[2 * j] = pred[2 * i];
      pred2[2 * j + 1] = pred[2 * i + 1];
    }
    const auto b = flow_metrics_2d(pred2, gt2);
    CHECK(a.epe == doctest::Approx(b.epe).epsilon(1e-14));
    CHECK(a.acc1px == b.acc1px);
    CHECK(a.fl == b.fl);
  }
}

TEST_CASE("3D flow metrics") {
  SUBCASE("perfect prediction") {
    const enc::Points gt{{0.1, 0.2, 0.3}};
    const auto m = flow_metrics_3d(gt, gt);
    CHECK(m.epe == 0.0);
    CHECK(m.acc05 == 1.0);
    CHECK(m.acc10 == 1.0);
  }
  SUBCASE("3-4-5 boundary is strict") {
    const auto m = flow_metrics_3d({{0.0, 0.0, 0.0}}, {{0.03, 0.0, 0.04}});
    CHECK(m.epe == 0.05);
    CHECK(m.acc05 == 0.0);
    CHECK(m.acc10 == 1.0);
  }
  SUBCASE("uniform error of 0.2") {
    const auto m = flow_metrics_3d({{0.2, 0.0, 0.0}, {0.0, -0.2, 0.0}}, {{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}});
    CHECK(m.epe == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(m.acc05 == 0.0);
    CHECK(m.acc10 == 0.0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(flow_metrics_3d({}, {}), ConfigError);
    CHECK_THROWS_AS(flow_metrics_3d({{0, 0, 0}}, {}), ShapeError);
  }
}

TEST_CASE("report aggregation and JSON") {
  EvalReport r;
  r.add({1.0, 0.5, 0.0}, {0.1, 0.2, 0.4}, "low-exposure");
  r.add({3.0, 1.0, 0.5}, {0.3, 0.0, 0.2});
  CHECK(r.samples == 2);
  CHECK(r.epe2d == 2.0);
  CHECK(r.acc1px == 0.75);
  CHECK(r.fl == 0.25);
  CHECK(r.epe3d == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(r.by_degradation.at("low-exposure").samples == 1);
  const auto j = r.to_json();
  for (const char* k : {"epe2d", "acc1px", "fl", "epe3d", "acc05", "acc10", "samples", "by_degradation"}) {
    CHECK(j.contains(k));
  }
  const auto back = EvalReport::from_json(j);
  CHECK(back.epe2d == r.epe2d);
  CHECK(back.acc10 == r.acc10);
  CHECK(back.by_degradation.at("low-exposure").epe2d == 1.0);
  CHECK_THROWS_AS(EvalReport::from_json(nlohmann::json::object()), FormatError);
}
