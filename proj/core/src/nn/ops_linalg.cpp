#include <Eigen/Core>
#include <stdexcept>
#include <string>

#include "labelformer/nn/ops.hpp"

namespace labelformer::nn {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap cmap(const std::vector<Real>& v, std::size_t offset, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap mmap(std::vector<Real>& v, std::size_t offset, std::size_t rows, std::size_t cols) {
  return MatMap(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                              " and " + shape_str(b.shape()));
}

}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    shape_error("bmm", a, b);
  }
  const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  std::vector<Real> out(B * M * N);
  for (std::size_t i = 0; i < B; ++i) {
    mmap(out, i * M * N, M, N).noalias() =
        cmap(a.node()->value, i * M * K, M, K) * cmap(b.node()->value, i * K * N, K, N);
  }
  return make_result("bmm", {B, M, N}, std::move(out), {a, b}, [B, M, K, N](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < B; ++i) {
      auto g = cmap(self.grad, i * M * N, M, N);
      if (pa.requires_grad) {
        mmap(pa.ensure_grad(), i * M * K, M, K).noalias() += g * cmap(pb.value, i * K * N, K, N).transpose();
      }
      if (pb.requires_grad) {
        mmap(pb.ensure_grad(), i * K * N, K, N).noalias() += cmap(pa.value, i * M * K, M, K).transpose() * g;
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a, b);
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<Real> out(M * N);
  mmap(out, 0, M, N).noalias() = cmap(a.node()->value, 0, M, K) * cmap(b.node()->value, 0, K, N);
  return make_result("matmul", {M, N}, std::move(out), {a, b}, [M, K, N](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    auto g = cmap(self.grad, 0, M, N);
    if (pa.requires_grad) mmap(pa.ensure_grad(), 0, M, K).noalias() += g * cmap(pb.value, 0, K, N).transpose();
    if (pb.requires_grad) mmap(pb.ensure_grad(), 0, K, N).noalias() += cmap(pa.value, 0, M, K).transpose() * g;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || x.dim(-1) != weight.dim(1)) shape_error("linear", x, weight);
  const std::size_t in = weight.dim(1), outf = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) shape_error("linear", weight, bias);
  const std::size_t rows = x.size() / in;
  Shape shape = x.shape();
  shape.back() = outf;
  std::vector<Real> out(rows * outf);
  auto y = mmap(out, 0, rows, outf);
  y.noalias() = cmap(x.node()->value, 0, rows, in) * cmap(weight.node()->value, 0, outf, in).transpose();
  if (bias.defined()) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), static_cast<Eigen::Index>(outf));
  }
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result("linear", std::move(shape), std::move(out), std::move(parents),
                     [rows, in, outf](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       auto g = cmap(self.grad, 0, rows, outf);
                       if (px.requires_grad) {
                         mmap(px.ensure_grad(), 0, rows, in).noalias() += g * cmap(pw.value, 0, outf, in);
                       }
                       if (pw.requires_grad) {
                         mmap(pw.ensure_grad(), 0, outf, in).noalias() +=
                             g.transpose() * cmap(px.value, 0, rows, in);
                       }
                       if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                         auto& gb = self.parents[2]->ensure_grad();
                         Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(outf)) +=
                             g.colwise().sum();
                       }
                     });
}

namespace {

struct ConvGeom {
  std::size_t N, C, H, W, O, k, stride, pad, Ho, Wo;
  std::size_t rows() const { return C * k * k; }
  std::size_t cols() const { return N * Ho * Wo; }
};

// cols[(c*k + ky)*k + kx][(n*Ho + oy)*Wo + ox]
void im2col(const ConvGeom& g, const Real* x, Real* cols) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        Real* row = cols + ((c * g.k + ky) * g.k + kx) * ncols;
        for (std::size_t n = 0; n < g.N; ++n) {
          const Real* plane = x + (n * g.C + c) * g.H * g.W;
          for (std::size_t oy = 0; oy < g.Ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            Real* dst = row + (n * g.Ho + oy) * g.Wo;
            if (iy < 0 || iy >= static_cast<long>(g.H)) {
              std::fill(dst, dst + g.Wo, 0.0);
              continue;
            }
            for (std::size_t ox = 0; ox < g.Wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              dst[ox] = (ix < 0 || ix >= static_cast<long>(g.W)) ? 0.0 : plane[iy * g.W + ix];
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvGeom& g, const Real* cols, Real* dx) {
  const std::size_t ncols = g.cols();
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const Real* row = cols + ((c * g.k + ky) * g.k + kx) * ncols;
        for (std::size_t n = 0; n < g.N; ++n) {
          Real* plane = dx + (n * g.C + c) * g.H * g.W;
          for (std::size_t oy = 0; oy < g.Ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
            const Real* src = row + (n * g.Ho + oy) * g.Wo;
            for (std::size_t ox = 0; ox < g.Wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < static_cast<long>(g.W)) plane[iy * g.W + ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    shape_error("conv2d", x, weight);
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, padding, 0, 0};
  if (g.H + 2 * padding < g.k || g.W + 2 * padding < g.k) shape_error("conv2d", x, weight);
  g.Ho = (g.H + 2 * padding - g.k) / stride + 1;
  g.Wo = (g.W + 2 * padding - g.k) / stride + 1;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.O)) shape_error("conv2d", weight, bias);

  auto cols = std::make_shared<std::vector<Real>>(g.rows() * g.cols());
  im2col(g, x.values().data(), cols->data());
  RowMat y = cmap(weight.node()->value, 0, g.O, g.rows()) * cmap(*cols, 0, g.rows(), g.cols());
  if (bias.defined()) {
    y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.values().data(), static_cast<Eigen::Index>(g.O));
  }
  // [O, N*Ho*Wo] -> [N, O, Ho, Wo]
  const std::size_t hw = g.Ho * g.Wo;
  std::vector<Real> out(g.N * g.O * hw);
  for (std::size_t o = 0; o < g.O; ++o) {
    for (std::size_t n = 0; n < g.N; ++n) {
      std::copy_n(y.data() + o * g.cols() + n * hw, hw, out.data() + (n * g.O + o) * hw);
    }
  }
  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result("conv2d", {g.N, g.O, g.Ho, g.Wo}, std::move(out), std::move(parents),
                     [g, cols, hw](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       RowMat gy(g.O, g.cols());
                       for (std::size_t o = 0; o < g.O; ++o) {
                         for (std::size_t n = 0; n < g.N; ++n) {
                           std::copy_n(self.grad.data() + (n * g.O + o) * hw, hw,
                                       gy.data() + o * g.cols() + n * hw);
                         }
                       }
                       if (pw.requires_grad) {
                         mmap(pw.ensure_grad(), 0, g.O, g.rows()).noalias() +=
                             gy * cmap(*cols, 0, g.rows(), g.cols()).transpose();
                       }
                       if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                         auto& gb = self.parents[2]->ensure_grad();
                         Eigen::Map<Eigen::VectorXd>(gb.data(), static_cast<Eigen::Index>(g.O)) +=
                             gy.rowwise().sum();
                       }
                       if (px.requires_grad) {
                         RowMat dcols = cmap(pw.value, 0, g.O, g.rows()).transpose() * gy;
                         col2im(g, dcols.data(), px.ensure_grad().data());
                       }
                     });
}

namespace {

struct Tap {
  std::size_t i0, i1;
  Real w0, w1;
};

// Half-pixel source coordinates for a 2x upsample of length n.
std::vector<Tap> upsample_taps(std::size_t n) {
  std::vector<Tap> taps(2 * n);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    Real src = (static_cast<Real>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > n - 1) i0 = n - 1;
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const Real lam = src - static_cast<Real>(i0);
    taps[o] = {i0, i1, 1.0 - lam, lam};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample_2x(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) == 0 || x.dim(3) == 0) {
    throw std::invalid_argument("bilinear_upsample_2x: expected [N, C, H, W], got " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto ty = upsample_taps(H);
  const auto tx = upsample_taps(W);
  std::vector<Real> out(planes * 4 * H * W);
  const Real* xv = x.values().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* src = xv + p * H * W;
    Real* dst = out.data() + p * 4 * H * W;
    for (std::size_t oy = 0; oy < 2 * H; ++oy) {
      const Tap& a = ty[oy];
      for (std::size_t ox = 0; ox < 2 * W; ++ox) {
        const Tap& b = tx[ox];
        dst[oy * 2 * W + ox] = a.w0 * (b.w0 * src[a.i0 * W + b.i0] + b.w1 * src[a.i0 * W + b.i1]) +
                               a.w1 * (b.w0 * src[a.i1 * W + b.i0] + b.w1 * src[a.i1 * W + b.i1]);
      }
    }
  }
  return make_result("bilinear_upsample_2x", {x.dim(0), x.dim(1), 2 * H, 2 * W}, std::move(out), {x},
                     [planes, H, W, ty, tx](Node& self) {
                       auto& gx = self.parents[0]->ensure_grad();
                       for (std::size_t p = 0; p < planes; ++p) {
                         const Real* g = self.grad.data() + p * 4 * H * W;
                         Real* d = gx.data() + p * H * W;
                         for (std::size_t oy = 0; oy < 2 * H; ++oy) {
                           const Tap& a = ty[oy];
                           for (std::size_t ox = 0; ox < 2 * W; ++ox) {
                             const Tap& b = tx[ox];
                             const Real v = g[oy * 2 * W + ox];
                             d[a.i0 * W + b.i0] += a.w0 * b.w0 * v;
                             d[a.i0 * W + b.i1] += a.w0 * b.w1 * v;
                             d[a.i1 * W + b.i0] += a.w1 * b.w0 * v;
                             d[a.i1 * W + b.i1] += a.w1 * b.w1 * v;
                           }
                         }
                       }
                     });
}

}  // namespace labelformer::nn
