#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "x2f/alignment/alignment.hpp"
#include "x2f/autodiff/optim.hpp"
#include "x2f/decoder/decoder.hpp"
#include "x2f/eventdom/events.hpp"
#include "x2f/synthscene/synth.hpp"

namespace x2f::dec {

enum class Variant { kFull, kNoEes, kNoReg, kNoEdge, kIndep, kJoint, kJointCcl };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
const std::vector<std::string>& variant_names();

struct ModelConfig {
  Variant variant = Variant::kFull;
  LossWeights weights;
  align::AlignConfig align;
  double gamma = 0.5;
  void validate() const;
};

// One trainable network under `prefix` and the branches it carries.
struct Head {
  std::string prefix;
  bool branch2d = true;
  bool branch3d = true;
};
std::vector<Head> heads_for(Variant v);

// Constant per-sample inputs: frozen event features, edge maps, projections
// and point pyramids are computed once.
struct SampleCache {
  enc::CameraModel camera;
  std::array<ad::Tensor, 2> image;                          // (1, H, W) in [0, 1]
  std::array<enc::Points, 2> points;
  std::array<ad::Tensor, 2> lidar;                          // (N, 6) descriptors
  std::array<std::vector<ad::Tensor>, 2> ze;                // per scale (C_s, H_s, W_s)
  std::array<std::vector<events::EdgeMap>, 2> edge;          // per scale
  std::array<std::vector<enc::ScaleProjection>, 2> proj;     // per scale
  std::array<std::vector<std::vector<double>>, 2> edge_at_points;
  std::array<PointPyramid, 2> pyramid;
  ad::Tensor gt2d;                                           // (2, H, W)
  ad::Tensor gt3d;                                           // (N, 3)
  FlowPyramids gt;
};

// Frame t0 reads the past half-window, frame t1 the future half. Features are
// divided by the encoder's "norm{s}" constants when present.
std::array<std::vector<ad::Tensor>, 2> frame_event_features(const synth::Sample& s, const events::EventEncoder& enc);
SampleCache prepare_sample(const synth::Sample& s, const events::EventEncoder& enc, std::uint64_t fps_seed = 0);

ad::ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed);

struct Losses {
  FlowPyramids pred;
  ad::Tensor task;
  ad::Tensor align;   // undefined when disabled
  ad::Tensor contra;  // undefined when disabled
  ad::Tensor pull;    // contra components, undefined when disabled
  ad::Tensor push;
  ad::Tensor total;
};
// Forward pass; `noise_seed` drives the reparameterization noise. With
// `with_losses` false only the predictions are produced.
Losses forward(const ModelConfig& cfg, const ad::ParamStore& ps, const SampleCache& c, std::uint64_t noise_seed,
               bool with_losses = true);
// Same forward with the event features computed in-graph from `enc` instead of the cache.
Losses forward_live(const ModelConfig& cfg, const ad::ParamStore& ps, const SampleCache& c,
                    const synth::Sample& s, const events::EventEncoder& enc, std::uint64_t noise_seed);

struct Prediction {
  std::vector<float> flow2d;  // H * W * 2 interleaved
  enc::Points flow3d;
};
Prediction predict(const ModelConfig& cfg, const ad::ParamStore& ps, const SampleCache& c);
// The variant is recovered from parameter names.
Variant infer_variant(const ad::ParamStore& ps);

// Model checkpoint: trainable parameters plus the frozen event encoder under "edge.".
ad::ParamStore bundle(const ad::ParamStore& model, const events::EventEncoder& enc);
std::pair<ad::ParamStore, events::EventEncoder> unbundle(const ad::ParamStore& all);

using LogSink = std::function<void(const nlohmann::json&)>;

struct TrainConfig {
  ModelConfig model;
  std::uint64_t seed = 1;
  int epochs = 30;
  std::size_t batch = 1;
  ad::AdamHyper adam{2e-3, 0.9, 0.999, 1e-8, 1e-6};
  std::vector<int> milestones{20, 26};
  double lr_factor = 0.5;
  void validate() const;
};

struct StepStats {
  double total = 0.0;
  double task = 0.0;
  double align = 0.0;
  double contra = 0.0;
};

// One optimizer step over `batch` with gradients averaged across samples.
StepStats train_step(const ModelConfig& cfg, ad::ParamStore& ps, ad::OptimState& opt, const ad::AdamHyper& hyper,
                     const std::vector<const SampleCache*>& batch, std::uint64_t noise_seed);

ad::ParamStore train_model(const TrainConfig& cfg, const std::vector<SampleCache>& data, const LogSink& log = {});

struct PretrainConfig {
  std::uint64_t seed = 1;
  int epochs = 20;
  std::size_t batch = 4;
  ad::AdamHyper adam{3e-3, 0.9, 0.999, 1e-8, 0.0};
  void validate() const;
};

struct PretrainSample {
  ad::Tensor voxels;                   // past half-window
  std::vector<events::EdgeMap> future;  // per scale
};
PretrainSample prepare_pretrain(const synth::Sample& s);

// Stores the per-scale RMS of the encoder features over `data` as "norm{s}".
void calibrate_event_norm(events::EventEncoder& enc, const std::vector<PretrainSample>& data);

// Returns the trained, calibrated encoder; `epoch_loss` receives the mean loss per epoch.
events::EventEncoder pretrain_edge_encoder(const std::vector<PretrainSample>& data, const PretrainConfig& cfg,
                                           const LogSink& log = {}, std::vector<double>* epoch_loss = nullptr);
// Per-scale predicted future edge maps (1, H_s, W_s).
std::vector<ad::Tensor> predict_edges(const events::EventEncoder& enc, const PretrainSample& s);

}  // namespace x2f::dec
