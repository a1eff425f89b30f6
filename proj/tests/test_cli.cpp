#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "x2f/cli/cli.hpp"
#include "x2f/error.hpp"
#include "x2f/io/formats.hpp"

using namespace x2f;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("x2f_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& f : fa)
    if (io::read_bytes(a / f) != io::read_bytes(b / f)) return false;
  return true;
}

}  // namespace

TEST_CASE("exit codes and single-line errors") {
  const auto dir = scratch("codes");
  SUBCASE("unknown flag") {
    const auto r = run({"gen", "--bogus"});
    CHECK(r.code == 2);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  }
  SUBCASE("unknown subcommand") { CHECK(run({"fly"}).code == 2); }
  SUBCASE("missing subcommand") { CHECK(run({}).code == 2); }
  SUBCASE("missing required option") {
    const auto r = run({"gen", "--n", "2"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--out") != std::string::npos);
  }
  SUBCASE("bad value") { CHECK(run({"gen", "--out", (dir / "d").string(), "--n", "two"}).code == 2); }
  SUBCASE("unknown degradation") {
    CHECK(run({"gen", "--out", (dir / "d").string(), "--degrade", "fog:1"}).code == 2);
    CHECK(run({"gen", "--out", (dir / "d").string(), "--degrade", "sparse-lidar:4"}).code == 2);
  }
  SUBCASE("missing dataset") { CHECK(run({"pretrain", "--data", (dir / "none").string(), "--out", "x"}).code == 2); }
  SUBCASE("unknown variant") {
    CHECK(run({"train", "--data", "d", "--out", "o", "--variant", "best"}).code == 2);
  }
  SUBCASE("non-finite flow in viz is a numeric failure") {
    io::write_flo(dir / "nan.flo", {1, 1, {std::nanf(""), 0.0f}});
    CHECK(run({"viz", "--flo", (dir / "nan.flo").string(), "--out", (dir / "nan.ppm").string()}).code == 3);
  }
  SUBCASE("corrupt input is a generic failure") {
    io::write_bytes(dir / "bad.flo", {1, 2, 3});
    CHECK(run({"viz", "--flo", (dir / "bad.flo").string(), "--out", (dir / "b.ppm").string()}).code == 1);
  }
}

TEST_CASE("config files") {
  cli::Settings s;
  SUBCASE("keys, comments and blank lines") {
    cli::apply_config_text(s, "# run\nseed = 9\n\nlr=0.01  # comment\nomega = 0.5, 0.25, 0.125\nmilestones = 3,4\n",
                           "a.cfg");
    CHECK(s.seed == 9);
    CHECK(s.train.adam.lr == 0.01);
    CHECK(s.train.model.weights.omega[2] == 0.125);
    CHECK(s.train.milestones == std::vector<int>{3, 4});
  }
  SUBCASE("unknown key names its line") {
    try {
      cli::apply_config_text(s, "seed = 1\n# x\nlearning_rate = 2\n", "b.cfg");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("b.cfg line 3") != std::string::npos);
      CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }
  }
  SUBCASE("line without '='") { CHECK_THROWS_AS(cli::apply_config_text(s, "seed 1\n", "c.cfg"), ConfigError); }
  SUBCASE("through the command line, flags override the file") {
    const auto dir = scratch("config");
    io::write_text(dir / "run.cfg", "n = 1\nseed = 4\n");
    CHECK(run({"gen", "--config", (dir / "run.cfg").string(), "--out", (dir / "a").string(), "--seed", "5"}).code == 0);
    CHECK(run({"gen", "--n", "1", "--seed", "5", "--out", (dir / "b").string()}).code == 0);
    CHECK(same_tree(dir / "a", dir / "b"));
    io::write_text(dir / "bad.cfg", "n = 1\nfoo = 1\n");
    const auto r = run({"gen", "--config", (dir / "bad.cfg").string(), "--out", (dir / "c").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("line 2") != std::string::npos);
  }
  SUBCASE("every hyperparameter key is accepted") {
    for (const char* k : {"lambda_align", "lambda_contra", "lambda_2d", "lambda_3d", "gamma", "weight_decay", "beta1",
                          "beta2", "eps_adam", "lr_factor", "align_lambda_2d", "align_lambda_3d", "pretrain_lr"}) {
      CHECK_NOTHROW(cli::apply_setting(s, k, "0.5", "test"));
    }
  }
}

TEST_CASE("gen is deterministic across runs and worker counts") {
  const auto dir = scratch("gen");
  CHECK(run({"gen", "--out", (dir / "a").string(), "--n", "3", "--seed", "7"}).code == 0);
  CHECK(run({"gen", "--out", (dir / "b").string(), "--n", "3", "--seed", "7", "--jobs", "3"}).code == 0);
  CHECK(run({"gen", "--out", (dir / "c").string(), "--n", "3", "--seed", "8"}).code == 0);
  CHECK(same_tree(dir / "a", dir / "b"));
  CHECK_FALSE(same_tree(dir / "a", dir / "c"));
}

TEST_CASE("eval on a prediction equal to ground truth") {
  const auto dir = scratch("eval");
  REQUIRE(run({"gen", "--out", (dir / "d").string(), "--n", "2", "--seed", "3", "--degrade", "drift-lidar:1"}).code ==
          0);
  for (const char* name : {"sample_00000", "sample_00001"}) {
    fs::create_directories(dir / "p" / name);
    fs::copy_file(dir / "d" / name / "flow2d_gt.flo", dir / "p" / name / "flow2d.flo");
    const auto gt3 = io::read_xyz_csv(dir / "d" / name / "flow3d_gt.csv", "dx,dy,dz");
    io::write_xyz_csv(dir / "p" / name / "flow3d.csv", "x,y,z", gt3);
  }
  const auto report = dir / "r.json";
  REQUIRE(run({"eval", "--data", (dir / "d").string(), "--pred", (dir / "p").string(), "--report", report.string()})
              .code == 0);
  const auto j = nlohmann::json::parse(io::read_text(report));
  CHECK(j["epe2d"].get<double>() == 0.0);
  CHECK(j["acc1px"].get<double>() == 1.0);
  CHECK(j["fl"].get<double>() == 0.0);
  CHECK(j["epe3d"].get<double>() == 0.0);
  CHECK(j["acc05"].get<double>() == 1.0);
  CHECK(j["samples"].get<int>() == 2);
  CHECK(j["by_degradation"].contains("drift-lidar:1"));
  CHECK(run({"eval", "--data", (dir / "d").string(), "--report", report.string()}).code == 2);
}

TEST_CASE("flow visualization") {
  SUBCASE("zero flow is white") {
    const auto rgb = cli::viz_flow({2, 3, std::vector<float>(12, 0.0f)});
    CHECK(std::all_of(rgb.begin(), rgb.end(), [](std::uint8_t v) { return v == 255; }));
  }
  SUBCASE("constant flow is one color") {
    io::Flow2D f{2, 2, {}};
    for (int i = 0; i < 4; ++i) f.uv.insert(f.uv.end(), {1.0f, 0.0f});
    const auto rgb = cli::viz_flow(f);
    for (std::size_t i = 3; i < rgb.size(); ++i) CHECK(rgb[i] == rgb[i % 3]);
    CHECK_FALSE((rgb[0] == 255 && rgb[1] == 255 && rgb[2] == 255));
  }
  SUBCASE("saturation is linear in magnitude up to the field max") {
    // One hue at 1/4, 1/2 and 1 of the max: each channel's distance from
    // white scales with the magnitude.
    io::Flow2D f{1, 3, {0.5f, 0.0f, 1.0f, 0.0f, 2.0f, 0.0f}};
    const auto rgb = cli::viz_flow(f);
    for (std::size_t c = 0; c < 3; ++c) {
      const double full = 255.0 - rgb[6 + c];
      CHECK(std::abs((255.0 - rgb[3 + c]) - full / 2.0) <= 1.0);
      CHECK(std::abs((255.0 - rgb[0 + c]) - full / 4.0) <= 1.0);
    }
  }
  SUBCASE("viz writes a P6 file") {
    const auto dir = scratch("viz");
    io::write_flo(dir / "f.flo", {2, 2, {1, 0, 0, 1, -1, 0, 0, -1}});
    CHECK(run({"viz", "--flo", (dir / "f.flo").string(), "--out", (dir / "f.ppm").string()}).code == 0);
    const auto bytes = io::read_bytes(dir / "f.ppm");
    CHECK(std::string(bytes.begin(), bytes.begin() + 2) == "P6");
    CHECK(bytes.size() == std::string("P6\n2 2\n255\n").size() + 12);
  }
}
