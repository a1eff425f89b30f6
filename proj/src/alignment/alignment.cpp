#include "x2f/alignment/alignment.hpp"

#include <string>

#include "x2f/autodiff/ops.hpp"
#include "x2f/error.hpp"

namespace x2f::align {

namespace o = ad::ops;

void AlignConfig::validate() const {
  if (!(lambda_2d >= 0.0) || !(lambda_3d >= 0.0)) throw ConfigError("align: lambda_2d and lambda_3d must be >= 0");
}

ad::Tensor pairwise_l1(const ad::Tensor& zi, const ad::Tensor& ze, const ad::Tensor& zl) {
  if (zi.rank() != 2 || zi.shape() != ze.shape() || zi.shape() != zl.shape()) {
    throw ShapeError("pairwise_l1: location sets differ, I " + ad::to_string(zi.shape()) + ", E " +
                     ad::to_string(ze.shape()) + ", L " + ad::to_string(zl.shape()));
  }
  const auto e = o::stop_gradient(ze);
  const auto d_ie = o::abs_sum(o::sub(zi, e), 1);
  const auto d_il = o::abs_sum(o::sub(zi, zl), 1);
  const auto d_el = o::abs_sum(o::sub(e, zl), 1);
  return o::add(o::add(d_ie, d_il), d_el);
}

ad::Tensor weighted_mean(const WeightedField& f) {
  if (f.distance.rank() != 1 || f.distance.dim(0) != f.weights.size()) {
    throw ShapeError("align_loss: distance field " + ad::to_string(f.distance.shape()) + " vs " +
                     std::to_string(f.weights.size()) + " weights");
  }
  for (double w : f.weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("align_loss: edge weight " + std::to_string(w) + " outside [0, 1]");
  }
  return o::mean(o::mul(f.distance, ad::Tensor::constant({f.weights.size()}, f.weights)));
}

ad::Tensor align_loss(const std::vector<WeightedField>& fields_2d, const std::vector<WeightedField>& fields_3d,
                      const AlignConfig& cfg) {
  cfg.validate();
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (const auto& f : fields_2d) total = o::add(total, o::scale(weighted_mean(f), cfg.lambda_2d));
  for (const auto& f : fields_3d) total = o::add(total, o::scale(weighted_mean(f), cfg.lambda_3d));
  return total;
}

}  // namespace x2f::align
