#include "labelformer/nn/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "labelformer/error.hpp"

namespace labelformer::nn {

void adamw_step(AdamWState& state, std::span<std::vector<Real>* const> params,
                std::span<const std::vector<Real>> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("adamw_step: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->size() != grads[i].size()) {
      throw std::invalid_argument("adamw_step: shape mismatch for parameter " + std::to_string(i));
    }
    for (Real g : grads[i]) {
      if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient in parameter " + std::to_string(i));
    }
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adamw_step: state/parameter count mismatch");

  const AdamWConfig& c = state.cfg;
  ++state.step;
  const Real bc1 = 1.0 - std::pow(c.beta1, static_cast<Real>(state.step));
  const Real bc2 = 1.0 - std::pow(c.beta2, static_cast<Real>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<Real>& p = *params[i];
    std::vector<Real>& m = state.m[i];
    std::vector<Real>& v = state.v[i];
    const std::vector<Real>& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const Real mhat = m[j] / bc1;
      const Real vhat = v[j] / bc2;
      p[j] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * p[j]);
    }
  }
}

void adamw_step(AdamWState& state, ParameterStore& store, std::span<const std::vector<Real>> grads) {
  std::vector<std::vector<Real>*> ptrs;
  ptrs.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) ptrs.push_back(&store[i].value);
  adamw_step(state, ptrs, grads);
}

void LrSchedule::validate() const {
  if (!(base_lr > 0.0)) throw std::invalid_argument("LrSchedule: base_lr must be > 0");
  if (!(floor_ratio > 0.0 && floor_ratio <= 1.0)) throw std::invalid_argument("LrSchedule: floor_ratio must be in (0, 1]");
  if (!(warmup_epochs >= 0.0 && warmup_epochs < total_epochs)) {
    throw std::invalid_argument("LrSchedule: warmup_epochs must be in [0, total_epochs)");
  }
}

Real lr_at(const LrSchedule& s, Real epoch_fraction) {
  s.validate();
  if (!(epoch_fraction >= 0.0 && epoch_fraction <= s.total_epochs)) {
    throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch_fraction) + " outside [0, " +
                                std::to_string(s.total_epochs) + "]");
  }
  if (epoch_fraction < s.warmup_epochs) return s.base_lr * epoch_fraction / s.warmup_epochs;
  const Real progress = (epoch_fraction - s.warmup_epochs) / (s.total_epochs - s.warmup_epochs);
  const Real cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return s.base_lr * (s.floor_ratio + (1.0 - s.floor_ratio) * cosine);
}

Real clip_grad_norm(std::span<std::vector<Real>> grads, Real max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  Real sq = 0.0;
  for (const auto& g : grads) {
    for (Real x : g) sq += x * x;
  }
  const Real norm = std::sqrt(sq);
  if (norm > max_norm) {
    const Real s = max_norm / norm;
    for (auto& g : grads) {
      for (Real& x : g) x *= s;
    }
  }
  return norm;
}

}  // namespace labelformer::nn
