#pragma once

#include <span>
#include <vector>

#include "labelformer/nn/parameter.hpp"

namespace labelformer::nn {

struct AdamWConfig {
  Real lr = 5e-5;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real weight_decay = 1e-5;
};

struct AdamWState {
  AdamWConfig cfg;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  long step = 0;
};

// Decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// Moments are allocated on the first call. Throws NumericError on a
// non-finite gradient before touching any parameter.
void adamw_step(AdamWState& state, std::span<std::vector<Real>* const> params,
                std::span<const std::vector<Real>> grads);
void adamw_step(AdamWState& state, ParameterStore& store, std::span<const std::vector<Real>> grads);

struct LrSchedule {
  Real base_lr = 5e-5;
  Real warmup_epochs = 2.0;
  Real total_epochs = 50.0;
  Real floor_ratio = 0.1;

  void validate() const;
};

// Linear warmup from 0, then cosine from base_lr to base_lr * floor_ratio at
// total_epochs.
Real lr_at(const LrSchedule& s, Real epoch_fraction);

// Scales all grads in place when their global L2 norm exceeds max_norm.
// Returns the norm before clipping.
Real clip_grad_norm(std::span<std::vector<Real>> grads, Real max_norm);

}  // namespace labelformer::nn
