#include "x2f/cli/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "x2f/autodiff/checkpoint.hpp"
#include "x2f/error.hpp"
#include "x2f/metrics/metrics.hpp"

namespace x2f::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& where, const std::string& key, const std::string& value,
                            const std::string& want) {
  throw ConfigError(where + ": '" + key + "' expects " + want + ", got '" + value + "'");
}

double to_double(const std::string& where, const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  bad_value(where, key, v, "a finite number");
}

std::uint64_t to_u64(const std::string& where, const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const auto x = std::stoull(v, &used);
      if (used == v.size()) return x;
    }
  } catch (const std::exception&) {
  }
  bad_value(where, key, v, "a non-negative integer");
}

int to_int(const std::string& where, const std::string& key, const std::string& v) {
  const auto x = to_u64(where, key, v);
  if (x > 1000000000ULL) bad_value(where, key, v, "an integer <= 1e9");
  return static_cast<int>(x);
}

using Setter = std::function<void(Settings&, const std::string&, const std::string&, const std::string&)>;

Setter text(std::string Settings::*field) {
  return [field](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
    if (v.empty()) bad_value(w, k, v, "a non-empty value");
    s.*field = v;
  };
}

template <class F>
Setter number(F assign) {
  return [assign](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
    assign(s, to_double(w, k, v));
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["data"] = text(&Settings::data);
    t["val"] = text(&Settings::val);
    t["out"] = text(&Settings::out);
    t["edge_ckpt"] = text(&Settings::edge_ckpt);
    t["ckpt"] = text(&Settings::ckpt);
    t["report"] = text(&Settings::report);
    t["log"] = text(&Settings::log);
    t["pred"] = text(&Settings::pred);
    t["dump"] = text(&Settings::dump);
    t["flo"] = text(&Settings::flo);
    t["variant"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      try {
        dec::parse_variant(v);
      } catch (const ConfigError&) {
        bad_value(w, k, v, "one of full, no-ees, no-reg, no-edge, indep, joint, joint-ccl");
      }
      s.variant = v;
    };
    t["variants"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      auto list = split_list(v);
      if (list.empty()) bad_value(w, k, v, "a comma-separated variant list");
      for (const auto& x : list) {
        try {
          dec::parse_variant(x);
        } catch (const ConfigError&) {
          bad_value(w, k, x, "a known variant");
        }
      }
      s.variants = list;
    };
    t["seed"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.seed = to_u64(w, k, v);
    };
    t["seeds"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      const auto list = split_list(v);
      if (list.empty()) bad_value(w, k, v, "a comma-separated seed list");
      s.seeds.clear();
      for (const auto& x : list) s.seeds.push_back(to_u64(w, k, x));
    };
    t["n"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.n = to_u64(w, k, v);
      if (s.n == 0) bad_value(w, k, v, "a positive count");
    };
    t["degrade"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      for (const auto& item : split_list(v)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) bad_value(w, k, item, "kind:severity");
        const std::string kind = item.substr(0, colon);
        const int sev = to_int(w, k, item.substr(colon + 1));
        static const std::vector<std::string> kinds{"low-exposure", "high-exposure", "sparse-lidar", "drift-lidar"};
        if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
          bad_value(w, k, item, "kind in low-exposure, high-exposure, sparse-lidar, drift-lidar");
        }
        if (sev < 1 || sev > 3) bad_value(w, k, item, "severity 1-3");
        s.degrade.push_back(item);
      }
    };
    t["jobs"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.jobs = to_u64(w, k, v);
      if (s.jobs == 0 || s.jobs > 256) bad_value(w, k, v, "1-256 workers");
    };
    t["fps_seed"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.fps_seed = to_u64(w, k, v);
    };
    t["val_fraction"] = number([](Settings& s, double x) {
      if (!(x > 0.0 && x < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
      s.val_fraction = x;
    });
    t["epochs"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.train.epochs = to_int(w, k, v);
    };
    t["batch"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.train.batch = to_u64(w, k, v);
    };
    t["lr"] = number([](Settings& s, double x) { s.train.adam.lr = x; });
    t["weight_decay"] = number([](Settings& s, double x) { s.train.adam.weight_decay = x; });
    t["beta1"] = number([](Settings& s, double x) { s.train.adam.beta1 = x; });
    t["beta2"] = number([](Settings& s, double x) { s.train.adam.beta2 = x; });
    t["eps_adam"] = number([](Settings& s, double x) { s.train.adam.eps = x; });
    t["lr_factor"] = number([](Settings& s, double x) { s.train.lr_factor = x; });
    t["milestones"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.train.milestones.clear();
      for (const auto& x : split_list(v)) s.train.milestones.push_back(to_int(w, k, x));
    };
    t["lambda_align"] = number([](Settings& s, double x) { s.train.model.weights.lambda_align = x; });
    t["lambda_contra"] = number([](Settings& s, double x) { s.train.model.weights.lambda_contra = x; });
    t["lambda_2d"] = number([](Settings& s, double x) { s.train.model.weights.lambda_2d = x; });
    t["lambda_3d"] = number([](Settings& s, double x) { s.train.model.weights.lambda_3d = x; });
    t["omega"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      const auto list = split_list(v);
      if (list.size() != kNumScales) bad_value(w, k, v, "three comma-separated weights, fine to coarse");
      for (std::size_t i = 0; i < kNumScales; ++i) s.train.model.weights.omega[i] = to_double(w, k, list[i]);
    };
    t["gamma"] = number([](Settings& s, double x) { s.train.model.gamma = x; });
    t["align_lambda_2d"] = number([](Settings& s, double x) { s.train.model.align.lambda_2d = x; });
    t["align_lambda_3d"] = number([](Settings& s, double x) { s.train.model.align.lambda_3d = x; });
    t["pretrain_epochs"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.pretrain.epochs = to_int(w, k, v);
    };
    t["pretrain_batch"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.pretrain.batch = to_u64(w, k, v);
    };
    t["pretrain_seed"] = [](Settings& s, const std::string& w, const std::string& k, const std::string& v) {
      s.pretrain.seed = to_u64(w, k, v);
    };
    t["pretrain_lr"] = number([](Settings& s, double x) { s.pretrain.adam.lr = x; });
    t["pretrain_weight_decay"] = number([](Settings& s, double x) { s.pretrain.adam.weight_decay = x; });
    return t;
  }();
  return table;
}

std::string one_line(std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::replace(msg.begin(), msg.end(), '\r', ' ');
  return msg;
}

// Runs fn(i) for i in [0, n) on `jobs` threads; the first failure by index is rethrown.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required option ") + flag);
}

std::pair<std::string, int> parse_degradation(const std::string& item) {
  const auto colon = item.find(':');
  return {item.substr(0, colon), std::stoi(item.substr(colon + 1))};
}

std::string degradation_key(const synth::Sample& s) {
  std::string key;
  for (const auto& d : s.degradations) key += (key.empty() ? "" : "+") + d.kind + ":" + std::to_string(d.severity);
  return key;
}

struct Dataset {
  std::vector<std::string> names;
  std::vector<synth::Sample> samples;
};

Dataset load_dataset(const std::string& dir, std::size_t jobs) {
  if (!fs::exists(fs::path(dir) / "index.txt")) throw ConfigError("no dataset index at " + dir + "/index.txt");
  Dataset d;
  const auto paths = synth::read_index(dir);
  if (paths.empty()) throw ConfigError("dataset " + dir + " is empty");
  d.samples.resize(paths.size());
  for (const auto& p : paths) d.names.push_back(p.filename().string());
  parallel_for(paths.size(), jobs, [&](std::size_t i) { d.samples[i] = synth::read_sample(paths[i]); });
  return d;
}

std::vector<dec::PretrainSample> pretrain_inputs(const std::vector<synth::Sample>& samples) {
  std::vector<dec::PretrainSample> out;
  for (const auto& s : samples) out.push_back(dec::prepare_pretrain(s));
  return out;
}

std::vector<dec::SampleCache> caches(const std::vector<synth::Sample>& samples, const events::EventEncoder& enc,
                                     const Settings& s) {
  std::vector<dec::SampleCache> out(samples.size());
  parallel_for(samples.size(), s.jobs,
               [&](std::size_t i) { out[i] = dec::prepare_sample(samples[i], enc, s.fps_seed); });
  return out;
}

// The no-edge ablation: a randomly initialized encoder, frozen and
// normalized like a pretrained one.
events::EventEncoder random_edge_encoder(std::uint64_t seed, const std::vector<synth::Sample>& samples) {
  ad::Rng rng(ad::derive_seed(seed, 20));
  auto enc = events::EventEncoder::init(rng);
  enc.frozen = true;
  dec::calibrate_event_norm(enc, pretrain_inputs(samples));
  return enc;
}

events::EventEncoder load_edge_encoder(const std::string& path) {
  events::EventEncoder enc;
  enc.params = ad::read_checkpoint(path);
  enc.frozen = true;
  return enc;
}

class JsonLog {
 public:
  explicit JsonLog(const std::string& path) : path_(path) {}
  void operator()(const nlohmann::json& j) { text_ += j.dump() + "\n"; }
  void flush() const { io::write_text(path_, text_); }

 private:
  std::string path_;
  std::string text_;
};

void write_json(const std::string& path, const nlohmann::json& j) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  io::write_text(path, j.dump(2) + "\n");
}

void write_checkpoint_file(const std::string& path, const ad::ParamStore& ps) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  ad::write_checkpoint(path, ps);
}

metrics::EvalReport evaluate(const dec::ModelConfig& mc, const ad::ParamStore& ps, const std::vector<synth::Sample>& data,
                             const std::vector<dec::SampleCache>& cache, std::size_t jobs,
                             std::vector<dec::Prediction>* keep = nullptr) {
  std::vector<dec::Prediction> preds(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) { preds[i] = dec::predict(mc, ps, cache[i]); });
  metrics::EvalReport rep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    rep.add(metrics::flow_metrics_2d(preds[i].flow2d, data[i].flow2d), metrics::flow_metrics_3d(preds[i].flow3d, data[i].flow3d),
            degradation_key(data[i]));
  }
  if (keep) *keep = std::move(preds);
  return rep;
}

void cmd_gen(const Settings& s, std::ostream& out) {
  require(s.out, "--out");
  std::vector<std::pair<std::string, int>> deg;
  for (const auto& d : s.degrade) deg.push_back(parse_degradation(d));
  std::vector<synth::Sample> samples(s.n);
  parallel_for(s.n, s.jobs, [&](std::size_t i) {
    auto sample = synth::generate_sample(synth::random_spec(ad::derive_seed(s.seed, 100 + i)));
    for (const auto& [kind, sev] : deg) sample = synth::degrade(sample, kind, sev);
    samples[i] = std::move(sample);
  });
  synth::write_dataset(s.out, samples);
  out << "gen: wrote " << s.n << " samples to " << s.out << "\n";
}

void cmd_pretrain(const Settings& s, std::ostream& out) {
  require(s.data, "--data");
  require(s.out, "--out");
  const auto data = load_dataset(s.data, s.jobs);
  JsonLog log(s.log.empty() ? s.out + ".log.jsonl" : s.log);
  std::vector<double> losses;
  const auto enc = dec::pretrain_edge_encoder(pretrain_inputs(data.samples), s.pretrain, std::ref(log), &losses);
  write_checkpoint_file(s.out, enc.params);
  log.flush();
  out << "pretrain: " << losses.size() << " epochs";
  if (!losses.empty()) out << ", final L_edge " << losses.back();
  out << ", checkpoint " << s.out << "\n";
}

void cmd_train(const Settings& s, std::ostream& out) {
  require(s.data, "--data");
  require(s.out, "--out");
  const auto data = load_dataset(s.data, s.jobs);
  dec::TrainConfig cfg = s.train;
  cfg.seed = s.seed;
  cfg.model.variant = dec::parse_variant(s.variant);
  cfg.validate();
  events::EventEncoder enc;
  if (cfg.model.variant == dec::Variant::kNoEdge) {
    enc = random_edge_encoder(s.seed, data.samples);
  } else {
    require(s.edge_ckpt, "--edge-ckpt");
    enc = load_edge_encoder(s.edge_ckpt);
  }
  JsonLog log(s.log.empty() ? s.out + ".log.jsonl" : s.log);
  const auto ps = dec::train_model(cfg, caches(data.samples, enc, s), std::ref(log));
  write_checkpoint_file(s.out, dec::bundle(ps, enc));
  log.flush();
  out << "train: variant " << s.variant << ", " << cfg.epochs << " epochs, checkpoint " << s.out << "\n";
}

void cmd_eval(const Settings& s, std::ostream& out) {
  require(s.data, "--data");
  require(s.report, "--report");
  if (s.ckpt.empty() == s.pred.empty()) throw ConfigError("eval needs exactly one of --ckpt or --pred");
  const auto data = load_dataset(s.data, s.jobs);
  std::vector<dec::Prediction> preds(data.samples.size());
  metrics::EvalReport rep;
  if (!s.ckpt.empty()) {
    const auto [ps, enc] = dec::unbundle(ad::read_checkpoint(s.ckpt));
    dec::ModelConfig mc = s.train.model;
    mc.variant = dec::infer_variant(ps);
    rep = evaluate(mc, ps, data.samples, caches(data.samples, enc, s), s.jobs, &preds);
  } else {
    parallel_for(data.samples.size(), s.jobs, [&](std::size_t i) {
      const fs::path dir = fs::path(s.pred) / data.names[i];
      preds[i].flow2d = io::read_flo(dir / "flow2d.flo").uv;
      preds[i].flow3d = io::read_xyz_csv(dir / "flow3d.csv", "x,y,z");
    });
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const auto& g = data.samples[i];
      if (preds[i].flow2d.size() != g.flow2d.size() || preds[i].flow3d.size() != g.flow3d.size()) {
        throw ConfigError("prediction for " + data.names[i] + " does not match the ground-truth extent");
      }
      rep.add(metrics::flow_metrics_2d(preds[i].flow2d, g.flow2d), metrics::flow_metrics_3d(preds[i].flow3d, g.flow3d),
              degradation_key(g));
    }
  }
  if (!s.dump.empty()) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const fs::path dir = fs::path(s.dump) / data.names[i];
      fs::create_directories(dir);
      const auto& cam = data.samples[i].camera;
      io::write_flo(dir / "flow2d.flo", {cam.height, cam.width, preds[i].flow2d});
      io::write_xyz_csv(dir / "flow3d.csv", "x,y,z", preds[i].flow3d);
    }
  }
  write_json(s.report, rep.to_json());
  out << "eval: " << rep.samples << " samples, epe2d " << rep.epe2d << ", epe3d " << rep.epe3d << ", report "
      << s.report << "\n";
}

void cmd_ablate(const Settings& s, std::ostream& out) {
  require(s.data, "--data");
  require(s.report, "--report");
  auto data = load_dataset(s.data, s.jobs);
  std::vector<synth::Sample> train = std::move(data.samples), val;
  if (!s.val.empty()) {
    val = load_dataset(s.val, s.jobs).samples;
  } else {
    const auto held = static_cast<std::size_t>(std::ceil(s.val_fraction * static_cast<double>(train.size())));
    if (held == 0 || held >= train.size()) throw ConfigError("ablate: dataset too small to hold out a validation split");
    val.assign(train.end() - static_cast<long>(held), train.end());
    train.resize(train.size() - held);
  }
  const auto enc = s.edge_ckpt.empty() ? dec::pretrain_edge_encoder(pretrain_inputs(train), s.pretrain)
                                       : load_edge_encoder(s.edge_ckpt);
  const auto train_cache = caches(train, enc, s);
  const auto val_cache = caches(val, enc, s);
  nlohmann::json records = nlohmann::json::array();
  for (const auto& name : s.variants) {
    for (const auto seed : s.seeds) {
      dec::TrainConfig cfg = s.train;
      cfg.seed = seed;
      cfg.model.variant = dec::parse_variant(name);
      metrics::EvalReport rep;
      if (cfg.model.variant == dec::Variant::kNoEdge) {
        const auto rnd = random_edge_encoder(seed, train);
        const auto ps = dec::train_model(cfg, caches(train, rnd, s));
        rep = evaluate(cfg.model, ps, val, caches(val, rnd, s), s.jobs);
      } else {
        const auto ps = dec::train_model(cfg, train_cache);
        rep = evaluate(cfg.model, ps, val, val_cache, s.jobs);
      }
      records.push_back({{"variant", name}, {"seed", seed}, {"metrics", rep.to_json()}});
      out << "ablate: " << name << " seed " << seed << " epe2d " << rep.epe2d << " epe3d " << rep.epe3d << "\n";
    }
  }
  write_json(s.report, records);
}

void cmd_viz(const Settings& s, std::ostream& out) {
  require(s.flo, "--flo");
  require(s.out, "--out");
  const auto flow = io::read_flo(s.flo);
  io::write_ppm(s.out, flow.height, flow.width, viz_flow(flow));
  out << "viz: " << flow.width << "x" << flow.height << " -> " << s.out << "\n";
}

struct Command {
  const char* name;
  const char* help;
  std::vector<std::pair<std::string, std::string>> flags;  // flag -> config key
  void (*run)(const Settings&, std::ostream&);
};

const std::vector<Command>& commands() {
  static const std::vector<Command> list{
      {"gen", "generate a synthetic dataset", {{"out", "out"}, {"n", "n"}, {"seed", "seed"}, {"jobs", "jobs"}}, cmd_gen},
      {"pretrain", "pretrain the event edge encoder",
       {{"data", "data"}, {"out", "out"}, {"epochs", "pretrain_epochs"}, {"seed", "pretrain_seed"}, {"log", "log"},
        {"jobs", "jobs"}},
       cmd_pretrain},
      {"train", "train a model variant",
       {{"data", "data"}, {"edge-ckpt", "edge_ckpt"}, {"out", "out"}, {"variant", "variant"}, {"epochs", "epochs"},
        {"seed", "seed"}, {"log", "log"}, {"jobs", "jobs"}},
       cmd_train},
      {"eval", "evaluate a checkpoint or stored predictions",
       {{"data", "data"}, {"ckpt", "ckpt"}, {"pred", "pred"}, {"dump", "dump"}, {"report", "report"}, {"jobs", "jobs"}},
       cmd_eval},
      {"ablate", "train and evaluate a variant x seed grid",
       {{"data", "data"}, {"val", "val"}, {"edge-ckpt", "edge_ckpt"}, {"variants", "variants"}, {"seeds", "seeds"},
        {"epochs", "epochs"}, {"report", "report"}, {"jobs", "jobs"}},
       cmd_ablate},
      {"viz", "render a .flo file with the Middlebury color wheel", {{"flo", "flo"}, {"out", "out"}}, cmd_viz},
  };
  return list;
}

}  // namespace

void apply_setting(Settings& s, const std::string& key, const std::string& value, const std::string& where) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "'");
  it->second(s, where, key, value);
}

std::vector<std::string> setting_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : setters()) keys.push_back(k);
  return keys;
}

void apply_config_text(Settings& s, const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  for (std::size_t no = 1; std::getline(ss, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + " line " + std::to_string(no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    apply_setting(s, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
}

std::vector<std::uint8_t> viz_flow(const io::Flow2D& flow) {
  const std::size_t n = flow.height * flow.width;
  if (flow.uv.size() != 2 * n) throw FormatError("viz: flow payload does not match its extent");
  static const std::vector<std::array<double, 3>> wheel = [] {
    std::vector<std::array<double, 3>> w;
    const int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
    for (int i = 0; i < ry; ++i) w.push_back({255.0, std::floor(255.0 * i / ry), 0.0});
    for (int i = 0; i < yg; ++i) w.push_back({255.0 - std::floor(255.0 * i / yg), 255.0, 0.0});
    for (int i = 0; i < gc; ++i) w.push_back({0.0, 255.0, std::floor(255.0 * i / gc)});
    for (int i = 0; i < cb; ++i) w.push_back({0.0, 255.0 - std::floor(255.0 * i / cb), 255.0});
    for (int i = 0; i < bm; ++i) w.push_back({std::floor(255.0 * i / bm), 0.0, 255.0});
    for (int i = 0; i < mr; ++i) w.push_back({255.0, 0.0, 255.0 - std::floor(255.0 * i / mr)});
    return w;
  }();
  double max_mag = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = flow.uv[2 * i], v = flow.uv[2 * i + 1];
    if (!std::isfinite(u) || !std::isfinite(v)) throw NumericError("viz: non-finite flow at pixel " + std::to_string(i));
    max_mag = std::max(max_mag, std::hypot(u, v));
  }
  const double norm = max_mag > 0.0 ? max_mag : 1.0;
  const auto ncols = static_cast<double>(wheel.size());
  std::vector<std::uint8_t> rgb(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = flow.uv[2 * i], v = flow.uv[2 * i + 1];
    const double rad = std::hypot(u, v) / norm;
    const double fk = (std::atan2(v, u) / M_PI + 1.0) / 2.0 * (ncols - 1.0);
    const auto k0 = static_cast<std::size_t>(std::floor(fk));
    const std::size_t k1 = (k0 + 1) % wheel.size();
    const double f = fk - static_cast<double>(k0);
    for (std::size_t c = 0; c < 3; ++c) {
      const double col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
      rgb[3 * i + c] = static_cast<std::uint8_t>(std::floor(255.0 * (1.0 - rad * (1.0 - col)) + 1e-9));
    }
  }
  return rgb;
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"x2f: tri-modal 2D/3D flow pipeline"};
  app.require_subcommand(1);
  std::map<std::string, std::pair<std::string, std::string>> given;  // key -> (flag, value)
  std::string config_path;
  std::vector<std::string> degrade;
  std::map<const CLI::App*, const Command*> owner;
  for (const auto& cmd : commands()) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    owner[sub] = &cmd;
    sub->add_option("--config", config_path, "key=value settings file");
    for (const auto& [flag, key] : cmd.flags) {
      sub->add_option_function<std::string>(
          "--" + flag, [&given, key = key, flag = flag](const std::string& v) { given[key] = {flag, v}; },
          "sets '" + key + "'");
    }
    if (std::string(cmd.name) == "gen") sub->add_option("--degrade", degrade, "kind:severity, repeatable");
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitConfig;
  }
  try {
    Settings s;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
      s.config = config_path;
      apply_config_text(s, io::read_text(config_path), config_path);
    }
    for (const auto& [key, fv] : given) apply_setting(s, key, fv.second, "--" + fv.first);
    for (const auto& d : degrade) apply_setting(s, "degrade", d, "--degrade");
    const CLI::App* chosen = app.get_subcommands().at(0);
    owner.at(chosen)->run(s, out);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitOther;
  }
}

}  // namespace x2f::cli
