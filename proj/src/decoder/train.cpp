#include <cmath>
#include <numeric>

#include "x2f/decoder/model.hpp"
#include "x2f/error.hpp"

namespace x2f::dec {

namespace {

void accumulate_grads(const ad::ParamStore& ps, const ad::Gradients& g, ad::GradMap& acc) {
  for (const auto& [name, t] : ps.items()) {
    if (!g.reached(t)) continue;
    auto v = g.of(t);
    auto& dst = acc[name];
    if (dst.empty()) {
      dst = std::move(v);
    } else {
      for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
    }
  }
}

void scale_grads(ad::GradMap& g, double factor) {
  for (auto& [name, v] : g)
    for (double& x : v) x *= factor;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  ad::Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

double value_or_zero(const ad::Tensor& t) { return t.defined() ? t.item() : 0.0; }

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (!(adam.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(lr_factor > 0.0)) throw ConfigError("lr_factor must be > 0");
}

void PretrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("pretrain epochs must be >= 0");
  if (batch == 0) throw ConfigError("pretrain batch must be >= 1");
  if (!(adam.lr > 0.0)) throw ConfigError("pretrain lr must be > 0");
}

StepStats train_step(const ModelConfig& cfg, ad::ParamStore& ps, ad::OptimState& opt, const ad::AdamHyper& hyper,
                     const std::vector<const SampleCache*>& batch, std::uint64_t noise_seed) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  ad::GradMap grads;
  StepStats st;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Losses l = forward(cfg, ps, *batch[i], ad::derive_seed(noise_seed, i));
    if (!std::isfinite(l.total.item())) throw NumericError("train_step: non-finite total loss");
    st.total += l.total.item();
    st.task += l.task.item();
    st.align += value_or_zero(l.align);
    st.contra += value_or_zero(l.contra);
    accumulate_grads(ps, ad::backward(l.total), grads);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  scale_grads(grads, inv);
  ad::adam_step(ps, grads, opt, hyper);
  st.total *= inv;
  st.task *= inv;
  st.align *= inv;
  st.contra *= inv;
  return st;
}

ad::ParamStore train_model(const TrainConfig& cfg, const std::vector<SampleCache>& data, const LogSink& log) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");
  ad::ParamStore ps = init_model(cfg.model, cfg.seed);
  ad::OptimState opt;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ad::AdamHyper hyper = cfg.adam;
    hyper.lr = ad::multistep_lr(cfg.adam.lr, cfg.milestones, epoch, cfg.lr_factor);
    const auto order = shuffled(data.size(), ad::derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      std::vector<const SampleCache*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch); ++i) batch.push_back(&data[order[i]]);
      const StepStats st = train_step(cfg.model, ps, opt, hyper, batch, ad::derive_seed(cfg.seed, (1ULL << 32) + step));
      if (log) {
        log({{"epoch", epoch}, {"step", step}, {"loss_total", st.total}, {"loss_task", st.task},
             {"loss_align", st.align}, {"loss_contra", st.contra}, {"lr", hyper.lr}});
      }
      ++step;
    }
  }
  return ps;
}

PretrainSample prepare_pretrain(const synth::Sample& s) {
  const auto [past, future] = events::split_window(s.events);
  PretrainSample p;
  p.voxels = events::voxelize(past);
  const auto e = events::edge_strength(future);
  for (std::size_t k = 1; k <= kNumScales; ++k) p.future.push_back(events::pool_edge(e, k));
  return p;
}

events::EventEncoder pretrain_edge_encoder(const std::vector<PretrainSample>& data, const PretrainConfig& cfg,
                                           const LogSink& log, std::vector<double>* epoch_loss) {
  cfg.validate();
  if (data.empty()) throw ConfigError("pretrain: empty dataset");
  ad::Rng rng(ad::derive_seed(cfg.seed, 20));
  events::EventEncoder enc = events::EventEncoder::init(rng);
  enc.frozen = false;
  ad::OptimState opt;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(data.size(), ad::derive_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(epoch)));
    double sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t end = std::min(order.size(), b + cfg.batch);
      ad::GradMap grads;
      for (std::size_t i = b; i < end; ++i) {
        const PretrainSample& s = data[order[i]];
        const auto loss = events::edge_pretrain_loss(events::event_encode(s.voxels, enc), s.future, enc);
        if (!std::isfinite(loss.item())) throw NumericError("eventdom: non-finite edge loss");
        sum += loss.item();
        accumulate_grads(enc.params, ad::backward(loss), grads);
      }
      scale_grads(grads, 1.0 / static_cast<double>(end - b));
      ad::adam_step(enc.params, grads, opt, cfg.adam);
    }
    const double mean = sum / static_cast<double>(data.size());
    if (epoch_loss) epoch_loss->push_back(mean);
    if (log) log({{"epoch", epoch}, {"loss_edge", mean}, {"lr", cfg.adam.lr}});
  }
  enc.frozen = true;
  calibrate_event_norm(enc, data);
  return enc;
}

void calibrate_event_norm(events::EventEncoder& enc, const std::vector<PretrainSample>& data) {
  if (data.empty()) throw ConfigError("calibrate_event_norm: empty dataset");
  ad::NoGradGuard guard;
  std::array<double, kNumScales> sq{};
  std::array<double, kNumScales> count{};
  for (const auto& s : data) {
    const auto pyr = events::event_encode(s.voxels, enc);
    for (std::size_t k = 0; k < kNumScales; ++k) {
      for (double v : pyr[k].data()) sq[k] += v * v;
      count[k] += static_cast<double>(pyr[k].numel());
    }
  }
  for (std::size_t k = 0; k < kNumScales; ++k) {
    const double rms = std::sqrt(sq[k] / count[k]);
    const std::string name = "norm" + std::to_string(k + 1);
    const std::vector<double> v{rms > 1e-12 ? rms : 1.0};
    if (enc.params.contains(name)) {
      enc.params.assign(name, v);
    } else {
      enc.params.put(name, ad::Tensor::constant({1}, v));
    }
  }
}

std::vector<ad::Tensor> predict_edges(const events::EventEncoder& enc, const PretrainSample& s) {
  ad::NoGradGuard guard;
  const auto pyr = events::event_encode(s.voxels, enc);
  std::vector<ad::Tensor> out;
  for (std::size_t k = 0; k < kNumScales; ++k) out.push_back(events::edge_head(enc, k + 1, pyr[k]));
  return out;
}

}  // namespace x2f::dec
