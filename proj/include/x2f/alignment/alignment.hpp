#pragma once

#include <vector>

#include "x2f/autodiff/tensor.hpp"

namespace x2f::align {

struct AlignConfig {
  double lambda_2d = 1.0;
  double lambda_3d = 1.0;

  void validate() const;
};

// Embeddings as (L, C) rows over a shared location set. Z^E is detached.
// D(p) = |Zi - Ze|_1 + |Zi - Zl|_1 + |Ze - Zl|_1, shape (L).
ad::Tensor pairwise_l1(const ad::Tensor& zi, const ad::Tensor& ze, const ad::Tensor& zl);

// One distance field per scale with its edge weights in [0, 1].
struct WeightedField {
  ad::Tensor distance;
  std::vector<double> weights;
};

// mean_p e(p) * D(p)
ad::Tensor weighted_mean(const WeightedField& f);

// lambda_2d * sum_s mean(e D) over 2D fields + lambda_3d * same over 3D fields.
ad::Tensor align_loss(const std::vector<WeightedField>& fields_2d, const std::vector<WeightedField>& fields_3d,
                      const AlignConfig& cfg);

}  // namespace x2f::align
