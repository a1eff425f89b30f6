#include "x2f/autodiff/params.hpp"

#include <cmath>

#include "x2f/error.hpp"

namespace x2f::ad {

const Tensor& ParamStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (params_.count(name)) throw ConfigError("parameter '" + name + "' registered twice");
  auto [it, ok] = params_.emplace(name, Tensor::parameter(std::move(shape), std::move(values)));
  return it->second;
}

const Tensor& ParamStore::put(const std::string& name, Tensor value) {
  if (params_.count(name)) throw ConfigError("parameter '" + name + "' registered twice");
  return params_.emplace(name, std::move(value)).first->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::assign(const std::string& name, std::vector<double> values) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  Shape shape = it->second.shape();
  it->second = Tensor::parameter(std::move(shape), std::move(values));
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

ParamStore ParamStore::with_prefix_stripped(const std::string& prefix) const {
  ParamStore out;
  for (const auto& [name, t] : params_) {
    if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), t.shape(), t.to_vector());
  }
  return out;
}

void ParamStore::merge(const ParamStore& other, const std::string& prefix) {
  for (const auto& [name, t] : other.params_) add(prefix + name, t.shape(), t.to_vector());
}

std::vector<double> uniform_init(Rng& rng, std::size_t count, std::size_t fan_in) {
  const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> v(count);
  for (double& x : v) x = rng.uniform(-a, a);
  return v;
}

}  // namespace x2f::ad
