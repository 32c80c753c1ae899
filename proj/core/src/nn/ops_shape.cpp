#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "labelformer/nn/ops.hpp"

namespace labelformer::nn {

namespace {

// Views `shape` as [outer, shape[axis], inner].
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<long>(axis));
  }
  return out;
}

std::size_t row_width(const Shape& shape) {
  std::size_t w = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) w *= shape[i];
  return w;
}

}  // namespace

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result("reshape", std::move(shape), a.node()->value, {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& a, std::span<const std::size_t> axes) {
  const std::size_t r = a.rank();
  std::vector<bool> used(r, false);
  bool ok = axes.size() == r;
  for (std::size_t ax : axes) {
    if (!ok || ax >= r || used[ax]) {
      ok = false;
      break;
    }
    used[ax] = true;
  }
  if (!ok) throw std::invalid_argument("permute: invalid axes for shape " + shape_str(a.shape()));

  const Shape& in = a.shape();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[axes[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];

  // src[i] = input flat index of output element i.
  const std::size_t n = a.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += idx[d] * in_strides[axes[d]];
    src[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[src[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {a},
                     [src = std::move(src)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
                     });
}

Tensor permute(const Tensor& a, std::initializer_list<std::size_t> axes) {
  return permute(a, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw std::invalid_argument("transpose: rank < 2 for shape " + shape_str(a.shape()));
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t r = parts[0].rank();
  const std::size_t ax = resolve_axis(axis, r, "concat");
  Shape shape = parts[0].shape();
  shape[ax] = 0;
  for (const Tensor& p : parts) {
    bool ok = p.rank() == r;
    for (std::size_t d = 0; ok && d < r; ++d) ok = d == ax || p.shape()[d] == parts[0].shape()[d];
    if (!ok) {
      throw std::invalid_argument("concat: shape " + shape_str(p.shape()) + " incompatible with " +
                                  shape_str(parts[0].shape()) + " along axis " + std::to_string(ax));
    }
    shape[ax] += p.shape()[ax];
  }
  const AxisView total = axis_view(shape, ax);
  std::vector<std::size_t> widths;  // n * inner per part
  std::vector<Real> out(numel(shape));
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape()[ax] * total.inner;
    widths.push_back(w);
    const Real* src = p.values().data();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(src + o * w, w, out.data() + o * total.n * total.inner + col);
    }
    col += w;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result("concat", std::move(shape), std::move(out), std::move(parents),
                     [total, widths = std::move(widths)](Node& self) {
                       std::size_t col = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         Node& p = *self.parents[k];
                         const std::size_t w = widths[k];
                         if (p.requires_grad) {
                           auto& g = p.ensure_grad();
                           for (std::size_t o = 0; o < total.outer; ++o) {
                             const Real* src = self.grad.data() + o * total.n * total.inner + col;
                             for (std::size_t i = 0; i < w; ++i) g[o * w + i] += src[i];
                           }
                         }
                         col += w;
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = resolve_axis(axis, a.rank(), "slice");
  if (begin > end || end > a.shape()[ax]) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") out of bounds for shape " + shape_str(a.shape()));
  }
  const AxisView v = axis_view(a.shape(), ax);
  Shape shape = a.shape();
  shape[ax] = end - begin;
  const std::size_t w = (end - begin) * v.inner;
  std::vector<Real> out(v.outer * w);
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(a.values().data() + o * v.n * v.inner + begin * v.inner, w, out.data() + o * w);
  }
  return make_result("slice", std::move(shape), std::move(out), {a}, [v, begin, w](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < v.outer; ++o) {
      Real* dst = g.data() + o * v.n * v.inner + begin * v.inner;
      for (std::size_t i = 0; i < w; ++i) dst[i] += self.grad[o * w + i];
    }
  });
}

Tensor index_select(const Tensor& a, std::span<const std::int64_t> indices) {
  if (a.rank() < 1) throw std::invalid_argument("index_select: scalar input");
  const std::size_t rows = a.dim(0);
  const std::size_t width = row_width(a.shape());
  for (std::int64_t i : indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= rows) {
      throw std::invalid_argument("index_select: index " + std::to_string(i) + " out of range for shape " +
                                  shape_str(a.shape()));
    }
  }
  Shape shape = a.shape();
  shape[0] = indices.size();
  std::vector<Real> out(indices.size() * width);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(a.values().data() + indices[k] * width, width, out.data() + k * width);
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return make_result("index_select", std::move(shape), std::move(out), {a},
                     [idx = std::move(idx), width](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t k = 0; k < idx.size(); ++k) {
                         for (std::size_t j = 0; j < width; ++j) g[idx[k] * width + j] += self.grad[k * width + j];
                       }
                     });
}

Tensor scatter_rows(const Tensor& a, std::span<const std::int64_t> indices, std::size_t rows) {
  if (a.rank() < 1 || a.dim(0) != indices.size()) {
    throw std::invalid_argument("scatter_rows: " + std::to_string(indices.size()) + " indices for shape " +
                                shape_str(a.shape()));
  }
  std::vector<bool> taken(rows, false);
  for (std::int64_t i : indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= rows || taken[i]) {
      throw std::invalid_argument("scatter_rows: index " + std::to_string(i) + " out of range or repeated");
    }
    taken[i] = true;
  }
  return segment_sum(a, indices, rows);
}

Tensor segment_sum(const Tensor& a, std::span<const std::int64_t> segment_ids, std::size_t num_segments) {
  if (a.rank() < 1 || a.dim(0) != segment_ids.size()) {
    throw std::invalid_argument("segment_sum: " + std::to_string(segment_ids.size()) +
                                " segment ids for shape " + shape_str(a.shape()));
  }
  const std::size_t width = row_width(a.shape());
  for (std::int64_t s : segment_ids) {
    if (s < 0 || static_cast<std::size_t>(s) >= num_segments) {
      throw std::invalid_argument("segment_sum: segment id " + std::to_string(s) + " out of range");
    }
  }
  Shape shape = a.shape();
  shape[0] = num_segments;
  std::vector<Real> out(num_segments * width, 0.0);
  for (std::size_t k = 0; k < segment_ids.size(); ++k) {
    const Real* src = a.values().data() + k * width;
    Real* dst = out.data() + segment_ids[k] * width;
    for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
  }
  std::vector<std::int64_t> ids(segment_ids.begin(), segment_ids.end());
  return make_result("segment_sum", std::move(shape), std::move(out), {a},
                     [ids = std::move(ids), width](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         for (std::size_t j = 0; j < width; ++j) g[k * width + j] += self.grad[ids[k] * width + j];
                       }
                     });
}

namespace {

Tensor scaled_sum(const char* op, const Tensor& a, int axis, bool keepdim, bool average) {
  const std::size_t ax = resolve_axis(axis, a.rank(), op);
  const AxisView v = axis_view(a.shape(), ax);
  if (average && v.n == 0) throw std::invalid_argument(std::string(op) + ": empty axis");
  const Real s = average ? 1.0 / static_cast<Real>(v.n) : 1.0;
  std::vector<Real> out(v.outer * v.inner, 0.0);
  const Real* x = a.values().data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < v.n; ++k) {
      const Real* row = x + (o * v.n + k) * v.inner;
      Real* dst = out.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += row[i];
    }
  }
  if (average) {
    for (Real& y : out) y *= s;
  }
  return make_result(op, reduced_shape(a.shape(), ax, keepdim), std::move(out), {a}, [v, s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t k = 0; k < v.n; ++k) {
        Real* dst = g.data() + (o * v.n + k) * v.inner;
        const Real* src = self.grad.data() + o * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) dst[i] += s * src[i];
      }
    }
  });
}

}  // namespace

Tensor sum(const Tensor& a, int axis, bool keepdim) { return scaled_sum("sum", a, axis, keepdim, false); }

Tensor mean(const Tensor& a, int axis, bool keepdim) { return scaled_sum("mean", a, axis, keepdim, true); }

// The gradient goes to the first maximal element.
Tensor max(const Tensor& a, int axis, bool keepdim) {
  const std::size_t ax = resolve_axis(axis, a.rank(), "max");
  const AxisView v = axis_view(a.shape(), ax);
  if (v.n == 0) throw std::invalid_argument("max: empty axis");
  std::vector<Real> out(v.outer * v.inner, -std::numeric_limits<Real>::infinity());
  std::vector<std::size_t> arg(v.outer * v.inner, 0);
  const Real* x = a.values().data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t k = 0; k < v.n; ++k) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t src = (o * v.n + k) * v.inner + i;
        const std::size_t dst = o * v.inner + i;
        if (k == 0 || x[src] > out[dst]) {
          out[dst] = x[src];
          arg[dst] = src;
        }
      }
    }
  }
  return make_result("max", reduced_shape(a.shape(), ax, keepdim), std::move(out), {a},
                     [arg = std::move(arg)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
                     });
}

Tensor sum_all(const Tensor& a) {
  Real s = 0.0;
  for (Real v : a.values()) s += v;
  return make_result("sum_all", {}, {s}, {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (Real& x : g) x += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<Real>(a.size()));
}

}  // namespace labelformer::nn
