#include "labelformer/nn/parameter.hpp"

#include <cmath>
#include <stdexcept>

namespace labelformer::nn {

std::size_t ParameterStore::add(std::string name, Shape shape, std::vector<Real> value) {
  if (numel(shape) != value.size()) {
    throw std::invalid_argument("parameter " + name + ": shape " + shape_str(shape) + " does not match " +
                                std::to_string(value.size()) + " values");
  }
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const std::size_t idx = params_.size();
  index_.emplace(name, idx);
  params_.push_back({std::move(name), std::move(shape), std::move(value)});
  return idx;
}

std::size_t ParameterStore::add_zeros(std::string name, Shape shape) {
  std::vector<Real> v(numel(shape), 0.0);
  return add(std::move(name), std::move(shape), std::move(v));
}

std::size_t ParameterStore::add_ones(std::string name, Shape shape) {
  std::vector<Real> v(numel(shape), 1.0);
  return add(std::move(name), std::move(shape), std::move(v));
}

std::size_t ParameterStore::add_uniform(std::string name, Shape shape, std::size_t fan_in,
                                        std::mt19937_64& rng) {
  const Real bound = 1.0 / std::sqrt(static_cast<Real>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<Real> u(-bound, bound);
  std::vector<Real> v(numel(shape));
  for (Real& x : v) x = u(rng);
  return add(std::move(name), std::move(shape), std::move(v));
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::vector<std::vector<Real>> ParameterStore::zero_grads() const {
  std::vector<std::vector<Real>> g;
  g.reserve(params_.size());
  for (const Parameter& p : params_) g.emplace_back(p.value.size(), 0.0);
  return g;
}

Context::Context(const ParameterStore& store, bool requires_grad, bool train, std::uint64_t seed)
    : store_(&store), requires_grad_(requires_grad), train_(train), rng_(seed), bound_(store.size()) {}

const Tensor& Context::param(std::size_t index) {
  if (index >= bound_.size()) throw std::out_of_range("Context::param: index out of range");
  Tensor& t = bound_[index];
  if (!t.defined()) {
    const Parameter& p = (*store_)[index];
    t = Tensor::from(p.shape, p.value, requires_grad_);
  }
  return t;
}

void Context::accumulate_grads(std::vector<std::vector<Real>>& into) const {
  if (into.size() != bound_.size()) throw std::invalid_argument("accumulate_grads: size mismatch");
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (!bound_[i].defined()) continue;
    auto g = bound_[i].grad();
    if (g.empty()) continue;
    if (into[i].size() != g.size()) throw std::invalid_argument("accumulate_grads: shape mismatch");
    for (std::size_t j = 0; j < g.size(); ++j) into[i][j] += g[j];
  }
}

}  // namespace labelformer::nn
