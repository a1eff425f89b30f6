#include "x2f/autodiff/optim.hpp"

#include <cmath>

#include "x2f/error.hpp"

namespace x2f::ad {

void adam_step(ParamStore& params, const GradMap& grads, OptimState& state, const AdamHyper& hyper) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ConfigError("adam_step: gradient for unknown parameter '" + name + "'");
    if (g.size() != params.get(name).numel()) {
      throw ShapeError("adam_step: gradient size mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("adam_step: non-finite gradient in parameter '" + name + "' at entry " + std::to_string(i));
      }
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (const auto& [name, tensor] : params.items()) {
    const std::size_t n = tensor.numel();
    Moments& mom = state.moments[name];
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    auto git = grads.find(name);
    std::vector<double> p = tensor.to_vector();
    for (std::size_t i = 0; i < n; ++i) {
      const double g = git == grads.end() ? 0.0 : git->second[i];
      mom.m[i] = hyper.beta1 * mom.m[i] + (1.0 - hyper.beta1) * g;
      mom.v[i] = hyper.beta2 * mom.v[i] + (1.0 - hyper.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      p[i] -= hyper.lr * (mhat / (std::sqrt(vhat) + hyper.eps) + hyper.weight_decay * p[i]);
    }
    params.assign(name, std::move(p));
  }
}

double multistep_lr(double base, std::span<const int> milestones, int epoch, double factor) {
  double lr = base;
  for (int m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

}  // namespace x2f::ad
