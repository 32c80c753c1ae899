#include <cmath>
#include <stdexcept>
#include <string>

#include "labelformer/nn/ops.hpp"

namespace labelformer::nn {

Tensor softmax(const Tensor& a, int axis) {
  const std::size_t ax = resolve_axis(axis, a.rank(), "softmax");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= a.shape()[i];
  for (std::size_t i = ax + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  const std::size_t n = a.shape()[ax];
  const Real* x = a.values().data();
  std::vector<Real> out(a.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      Real m = x[base];
      for (std::size_t k = 1; k < n; ++k) m = std::max(m, x[base + k * inner]);
      Real s = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        out[base + k * inner] = std::exp(x[base + k * inner] - m);
        s += out[base + k * inner];
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= s;
    }
  }
  return make_result("softmax", a.shape(), std::move(out), {a}, [outer, inner, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const Real* y = self.value.data();
    const Real* gy = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        Real dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += gy[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t j = base + k * inner;
          g[j] += y[j] * (gy[j] - dot);
        }
      }
    }
  });
}

namespace {

// Normalizes `count` contiguous groups of `n` values each. Channel of
// element j in group r is given by `channel(r, j)`.
template <class ChannelFn>
Tensor normalize_groups(const char* op, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        std::size_t count, std::size_t n, Real eps, ChannelFn channel) {
  std::vector<Real> out(x.size());
  std::vector<Real> xhat(x.size());
  std::vector<Real> rstd(count);
  const Real* xv = x.values().data();
  const Real* gv = gamma.values().data();
  const Real* bv = beta.values().data();
  for (std::size_t r = 0; r < count; ++r) {
    const Real* row = xv + r * n;
    Real mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<Real>(n);
    Real var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t idx = r * n + j;
      const std::size_t c = channel(r, j);
      xhat[idx] = (row[j] - mu) * rstd[r];
      out[idx] = gv[c] * xhat[idx] + bv[c];
    }
  }
  return make_result(op, x.shape(), std::move(out), {x, gamma, beta},
                     [count, n, channel, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const Real* gy = self.grad.data();
                       if (pg.requires_grad || pb.requires_grad) {
                         auto& gg = pg.ensure_grad();
                         auto& gb = pb.ensure_grad();
                         for (std::size_t r = 0; r < count; ++r) {
                           for (std::size_t j = 0; j < n; ++j) {
                             const std::size_t idx = r * n + j;
                             const std::size_t c = channel(r, j);
                             gg[c] += gy[idx] * xhat[idx];
                             gb[c] += gy[idx];
                           }
                         }
                       }
                       if (!px.requires_grad) return;
                       auto& gx = px.ensure_grad();
                       const Real inv_n = 1.0 / static_cast<Real>(n);
                       for (std::size_t r = 0; r < count; ++r) {
                         Real s1 = 0.0, s2 = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           const std::size_t idx = r * n + j;
                           const Real d = gy[idx] * pg.value[channel(r, j)];
                           s1 += d;
                           s2 += d * xhat[idx];
                         }
                         s1 *= inv_n;
                         s2 *= inv_n;
                         for (std::size_t j = 0; j < n; ++j) {
                           const std::size_t idx = r * n + j;
                           const Real d = gy[idx] * pg.value[channel(r, j)];
                           gx[idx] += rstd[r] * (d - s1 - xhat[idx] * s2);
                         }
                       }
                     });
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  if (x.rank() < 1 || x.dim(-1) == 0 || gamma.size() != x.dim(-1) || beta.size() != x.dim(-1)) {
    throw std::invalid_argument("layer_norm: x " + shape_str(x.shape()) + " with gamma " +
                                shape_str(gamma.shape()) + " and beta " + shape_str(beta.shape()));
  }
  const std::size_t n = x.dim(-1);
  return normalize_groups("layer_norm", x, gamma, beta, x.size() / n, n, eps,
                          [](std::size_t, std::size_t j) { return j; });
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, Real eps) {
  if (x.rank() != 4 || groups == 0 || x.dim(1) % groups != 0 || gamma.size() != x.dim(1) ||
      beta.size() != x.dim(1)) {
    throw std::invalid_argument("group_norm: x " + shape_str(x.shape()) + " with " + std::to_string(groups) +
                                " groups, gamma " + shape_str(gamma.shape()));
  }
  const std::size_t C = x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  const std::size_t per = C / groups;
  const std::size_t n = per * hw;
  if (n == 0) throw std::invalid_argument("group_norm: empty group for shape " + shape_str(x.shape()));
  return normalize_groups("group_norm", x, gamma, beta, x.dim(0) * groups, n, eps,
                          [groups, per, hw](std::size_t r, std::size_t j) {
                            return (r % groups) * per + j / hw;
                          });
}

}  // namespace labelformer::nn
