#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "labelformer/nn/tensor.hpp"

namespace labelformer::nn {

struct Parameter {
  std::string name;
  Shape shape;
  std::vector<Real> value;
};

// Named, ordered trainable parameters. Indices returned by add() are stable.
class ParameterStore {
 public:
  std::size_t add(std::string name, Shape shape, std::vector<Real> value);
  std::size_t add_zeros(std::string name, Shape shape);
  std::size_t add_ones(std::string name, Shape shape);
  // U(-bound, bound) with bound = 1/sqrt(fan_in).
  std::size_t add_uniform(std::string name, Shape shape, std::size_t fan_in, std::mt19937_64& rng);

  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  std::size_t index_of(const std::string& name) const;

  std::vector<std::vector<Real>> zero_grads() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-forward binding of parameters to graph leaves, plus train mode and the
// dropout stream. One context per forward pass and thread.
class Context {
 public:
  Context(const ParameterStore& store, bool requires_grad, bool train, std::uint64_t seed = 0);

  const Tensor& param(std::size_t index);
  bool train() const { return train_; }
  std::mt19937_64& rng() { return rng_; }

  // Adds gradients of every bound parameter into `into` (one vector per
  // parameter, sized like the store).
  void accumulate_grads(std::vector<std::vector<Real>>& into) const;

 private:
  const ParameterStore* store_;
  bool requires_grad_;
  bool train_;
  std::mt19937_64 rng_;
  std::vector<Tensor> bound_;
};

}  // namespace labelformer::nn
