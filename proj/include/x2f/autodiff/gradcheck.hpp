#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "x2f/autodiff/params.hpp"
#include "x2f/autodiff/tensor.hpp"

namespace x2f::ad {

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

// Max over all parameter entries of |analytic - central| / max(1, |central|),
// central = (f(p + eps) - f(p - eps)) / (2 eps). `params` must be leaves and
// `f` deterministic. Values passing through stop_gradient are held at their
// unperturbed values, matching what backward differentiates. Throws
// NumericError naming the perturbed entry if f yields a non-finite value.
double finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps = 1e-5);

// Same metric over the entries of a named store. With max_entries > 0 each
// tensor contributes at most that many entries, picked by a seeded draw;
// this keeps checks on large models within a desk budget.
using StoreFn = std::function<Tensor(const ParamStore&)>;
struct FdOptions {
  double eps = 1e-5;
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};
double finite_diff_check(const StoreFn& f, const ParamStore& params, const FdOptions& opt = {});

}  // namespace x2f::ad
