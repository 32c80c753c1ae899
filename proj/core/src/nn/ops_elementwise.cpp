#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "labelformer/nn/ops.hpp"

namespace labelformer::nn {

namespace {

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1 || is_suffix(b.shape(), a.shape())) return a.shape();
  if (a.size() == 1 || is_suffix(a.shape(), b.shape())) return b.shape();
  throw std::invalid_argument(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) +
                              " with " + shape_str(b.shape()));
}

// f(x, y) with partials dfdx(x, y, out) and dfdy(x, y, out).
template <class F, class Dx, class Dy>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, Dx dfdx, Dy dfdy) {
  Shape shape = broadcast_shape(op, a, b);
  const std::size_t n = numel(shape);
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  std::vector<Real> out(n);
  const Real* av = a.values().data();
  const Real* bv = b.values().data();
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
  }
  return make_result(op, std::move(shape), std::move(out), {a, b},
                     [na, nb, n, dfdx, dfdy](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const Real* g = self.grad.data();
                       if (pa.requires_grad) {
                         auto& ga = pa.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           ga[i % na] += g[i] * dfdx(pa.value[i % na], pb.value[i % nb], self.value[i]);
                         }
                       }
                       if (pb.requires_grad) {
                         auto& gb = pb.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           gb[i % nb] += g[i] * dfdy(pa.value[i % na], pb.value[i % nb], self.value[i]);
                         }
                       }
                     });
}

// f(x) with derivative dfdx(x, out).
template <class F, class Dx>
Tensor unary(const char* op, const Tensor& a, F f, Dx dfdx) {
  const std::size_t n = a.size();
  std::vector<Real> out(n);
  const Real* av = a.values().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [n, dfdx](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return 1.0; },
      [](Real, Real, Real) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return 1.0; },
      [](Real, Real, Real) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
      [](Real x, Real, Real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return 1.0 / y; },
      [](Real x, Real y, Real) { return -x / (y * y); });
}

// Ties route the gradient to the first operand.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      "minimum", a, b, [](Real x, Real y) { return x <= y ? x : y; },
      [](Real x, Real y, Real) { return x <= y ? 1.0 : 0.0; },
      [](Real x, Real y, Real) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      "maximum", a, b, [](Real x, Real y) { return x >= y ? x : y; },
      [](Real x, Real y, Real) { return x >= y ? 1.0 : 0.0; },
      [](Real x, Real y, Real) { return x >= y ? 0.0 : 1.0; });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](Real x) { return -x; }, [](Real, Real) { return -1.0; });
}

Tensor scale(const Tensor& a, Real s) {
  return unary("scale", a, [s](Real x) { return s * x; }, [s](Real, Real) { return s; });
}

Tensor add_scalar(const Tensor& a, Real s) {
  return unary("add_scalar", a, [s](Real x) { return x + s; }, [](Real, Real) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](Real x) { return x > 0.0 ? x : 0.0; },
      [](Real x, Real) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sin(const Tensor& a) {
  return unary("sin", a, [](Real x) { return std::sin(x); }, [](Real x, Real) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary("cos", a, [](Real x) { return std::cos(x); }, [](Real x, Real) { return -std::sin(x); });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](Real x) { return x * x; }, [](Real x, Real) { return 2.0 * x; });
}

Tensor clamp_min(const Tensor& a, Real lo) {
  return unary(
      "clamp_min", a, [lo](Real x) { return x >= lo ? x : lo; },
      [lo](Real x, Real) { return x >= lo ? 1.0 : 0.0; });
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, Real beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be > 0");
  auto f = [beta](Real p, Real t) {
    const Real d = p - t;
    const Real ad = std::abs(d);
    return ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
  };
  auto dfdp = [beta](Real p, Real t, Real) {
    const Real d = p - t;
    if (std::abs(d) < beta) return d / beta;
    return d > 0.0 ? 1.0 : -1.0;
  };
  auto dfdt = [dfdp](Real p, Real t, Real o) { return -dfdp(p, t, o); };
  return binary("smooth_l1", pred, target, f, dfdp, dfdt);
}

Tensor dropout(const Tensor& a, Real p, bool train, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!train || p == 0.0) return a;
  const std::size_t n = a.size();
  const Real keep_scale = 1.0 / (1.0 - p);
  std::vector<Real> mask(n);
  std::uniform_real_distribution<Real> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) mask[i] = u(rng) < p ? 0.0 : keep_scale;
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] * mask[i];
  return make_result("dropout", a.shape(), std::move(out), {a},
                     [mask = std::move(mask)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
                     });
}

}  // namespace labelformer::nn
