#include "x2f/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "x2f/autodiff/random.hpp"
#include "x2f/error.hpp"

namespace x2f::ad {

namespace {

double check_impl(const ScalarFn& f, const std::vector<Tensor>& params, double eps,
                  const std::vector<std::vector<std::size_t>>* entries) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");
  for (const Tensor& p : params) {
    if (!p.is_leaf()) throw ConfigError("finite_diff_check: every parameter must be a differentiable leaf");
  }
  std::vector<std::vector<double>> detached;
  Tensor loss;
  {
    DetachTape record(DetachTape::Mode::kRecord, &detached);
    loss = f(params);
  }
  if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: non-finite loss at the unperturbed point");
  const Gradients grads = backward(loss);

  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::vector<double> analytic = grads.of(params[k]);
    const std::vector<double> base = params[k].to_vector();
    std::vector<std::size_t> all;
    if (!entries) {
      all.resize(base.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    }
    for (std::size_t i : entries ? (*entries)[k] : all) {
      auto eval = [&](double delta) {
        std::vector<Tensor> shifted = params;
        std::vector<double> v = base;
        v[i] += delta;
        shifted[k] = Tensor::constant(params[k].shape(), std::move(v));
        DetachTape replay(DetachTape::Mode::kReplay, &detached);
        const double value = f(shifted).item();
        if (!std::isfinite(value)) {
          throw NumericError("finite_diff_check: non-finite value perturbing parameter " + std::to_string(k) +
                             " entry " + std::to_string(i));
        }
        return value;
      };
      const double central = (eval(eps) - eval(-eps)) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - central) / std::max(1.0, std::abs(central)));
    }
  }
  return worst;
}

}  // namespace

double finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps) {
  return check_impl(f, params, eps, nullptr);
}

double finite_diff_check(const StoreFn& f, const ParamStore& params, const FdOptions& opt) {
  std::vector<std::string> names;
  std::vector<Tensor> leaves;
  std::vector<std::vector<std::size_t>> entries;
  Rng rng(opt.seed);
  for (const auto& [name, t] : params.items()) {
    names.push_back(name);
    leaves.push_back(t);
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_entries > 0 && idx.size() > opt.max_entries) {
      for (std::size_t i = 0; i < opt.max_entries; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
      idx.resize(opt.max_entries);
    }
    entries.push_back(std::move(idx));
  }
  auto wrapped = [&](std::span<const Tensor> ts) {
    ParamStore store;
    for (std::size_t i = 0; i < ts.size(); ++i) store.put(names[i], ts[i]);
    return f(store);
  };
  return check_impl(wrapped, leaves, opt.eps, &entries);
}

}  // namespace x2f::ad
