#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "x2f/autodiff/random.hpp"
#include "x2f/autodiff/tensor.hpp"

namespace x2f::ad {

// Named learnable tensors in deterministic (lexicographic) order.
class ParamStore {
 public:
  // Registers a differentiable leaf; throws on duplicate names.
  const Tensor& add(const std::string& name, Shape shape, std::vector<double> values);
  // Inserts an existing tensor as-is (leaf or constant); throws on duplicates.
  const Tensor& put(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  // Replaces the values of an existing parameter with a fresh leaf.
  void assign(const std::string& name, std::vector<double> values);

  const std::map<std::string, Tensor>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  // Copies every entry whose name starts with `prefix` into `out`, prefix stripped.
  ParamStore with_prefix_stripped(const std::string& prefix) const;
  // Inserts every entry of `other` under `prefix`.
  void merge(const ParamStore& other, const std::string& prefix);

 private:
  std::map<std::string, Tensor> params_;
};

// uniform(-a, a), a = sqrt(1 / fan_in).
std::vector<double> uniform_init(Rng& rng, std::size_t count, std::size_t fan_in);

}  // namespace x2f::ad
