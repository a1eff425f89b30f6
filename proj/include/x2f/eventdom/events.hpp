#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <utility>
#include <vector>

#include "x2f/autodiff/params.hpp"
#include "x2f/autodiff/random.hpp"
#include "x2f/autodiff/tensor.hpp"
#include "x2f/common.hpp"

namespace x2f::events {

struct Event {
  double t = 0.0;
  int x = 0;
  int y = 0;
  int p = 1;  // -1 or +1
};

struct EventStream {
  std::vector<Event> events;
  double t_start = 0.0;
  double t_end = 1.0;
  std::size_t height = 0;
  std::size_t width = 0;

  // Throws Error on unsorted times, events outside [t_start, t_end),
  // coordinates outside the sensor, or bad polarity.
  void validate() const;
};

// Scalar field in [0, 1]; values (H_s, W_s) row-major.
struct EdgeMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t scale = 0;
  std::vector<double> values;

  double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
  // (1, H, W) constant tensor.
  ad::Tensor tensor() const;
};

inline constexpr std::size_t kDefaultBins = 5;

// (2, B, H, W) counts; channel 0 holds p = -1, channel 1 holds p = +1.
ad::Tensor voxelize(const EventStream& stream, std::size_t bins = kDefaultBins);

// Per-pixel activity times temporal coherence. Order-independent; events
// stamped exactly at t_end are tolerated so closed-window fixtures can be scored.
EdgeMap edge_strength(const EventStream& stream);

// Non-overlapping average pooling with stride 2^scale.
EdgeMap pool_edge(const EdgeMap& e, std::size_t scale);

std::pair<EventStream, EventStream> split_window(const EventStream& stream);

// Dense 3D conv stages over the voxel grid plus per-scale edge heads g_s.
// Parameter names: "conv{s}.w", "conv{s}.b", "head{s}.w", "head{s}.b".
struct EventEncoder {
  ad::ParamStore params;
  bool frozen = false;

  static EventEncoder init(ad::Rng& rng);
};

// Per-scale maps F^E_s of shape (C_s, H / 2^s, W / 2^s). A frozen encoder runs
// without recording and the outputs are wrapped in stop_gradient.
std::vector<ad::Tensor> event_encode(const ad::Tensor& voxels, const EventEncoder& enc);

// g_s(F): 1x1 conv to one channel followed by sigmoid -> (1, H_s, W_s).
ad::Tensor edge_head(const EventEncoder& enc, std::size_t scale, const ad::Tensor& features);

inline constexpr std::array<double, kNumScales> kEdgeLambdas{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

// Sum over scales of lambda_s * mean |g_s(F_s) - e_s|.
ad::Tensor edge_pretrain_loss(const std::vector<ad::Tensor>& pyr_past, const std::vector<EdgeMap>& e_future,
                              const EventEncoder& enc,
                              const std::array<double, kNumScales>& lambdas = kEdgeLambdas);

// Same loss on precomputed predictions (1, H_s, W_s).
ad::Tensor edge_l1_loss(const std::vector<ad::Tensor>& predictions, const std::vector<EdgeMap>& targets,
                        const std::array<double, kNumScales>& lambdas = kEdgeLambdas);

// CSV with header "t,x,y,p". Window and extent come from the caller.
void write_events_csv(const std::filesystem::path& path, const EventStream& stream);
EventStream read_events_csv(const std::filesystem::path& path, double t_start, double t_end,
                            std::size_t height, std::size_t width);

}  // namespace x2f::events
