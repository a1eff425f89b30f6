#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "x2f/autodiff/params.hpp"

namespace x2f::ad {

// Base learning rate and weight decay follow the reference training setup;
// beta1/beta2/eps are conventional Adam defaults.
struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

struct OptimState {
  std::map<std::string, Moments> moments;
  std::uint64_t step = 0;
};

using GradMap = std::map<std::string, std::vector<double>>;

// Adam with decoupled weight decay. Parameters absent from `grads` are
// treated as having zero gradient. Throws NumericError naming the parameter
// on a non-finite gradient entry.
void adam_step(ParamStore& params, const GradMap& grads, OptimState& state, const AdamHyper& hyper);

// Step schedule: base * factor^(number of milestones <= epoch).
double multistep_lr(double base, std::span<const int> milestones, int epoch, double factor = 0.5);

}  // namespace x2f::ad
