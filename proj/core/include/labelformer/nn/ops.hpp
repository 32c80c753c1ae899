#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "labelformer/nn/tensor.hpp"

// Differentiable operations. Every op validates shapes and throws
// std::invalid_argument naming the op and the offending shapes.
//
// Binary element-wise ops broadcast when one operand's shape is a suffix of
// the other's (including a 0-d or single-element tensor).
namespace labelformer::nn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, Real s);
Tensor add_scalar(const Tensor& a, Real s);
Tensor relu(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp_min(const Tensor& a, Real lo);
// Element-wise smooth-L1 of (pred - target): 0.5 d^2 / beta if |d| < beta else |d| - 0.5 beta.
Tensor smooth_l1(const Tensor& pred, const Tensor& target, Real beta);

// [M, K] x [K, N] -> [M, N]
Tensor matmul(const Tensor& a, const Tensor& b);
// [B, M, K] x [B, K, N] -> [B, M, N]
Tensor bmm(const Tensor& a, const Tensor& b);
// x: [..., in], weight: [out, in], bias: [out] or undefined -> [..., out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, std::span<const std::size_t> axes);
Tensor permute(const Tensor& a, std::initializer_list<std::size_t> axes);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);
// Rows of `a` (axis 0) at `indices`.
Tensor index_select(const Tensor& a, std::span<const std::int64_t> indices);
// Zero tensor with `rows` rows where row indices[i] = a[i]; indices must be unique.
Tensor scatter_rows(const Tensor& a, std::span<const std::int64_t> indices, std::size_t rows);
// out[s] = sum of a[i] with segment_ids[i] == s, for s in [0, num_segments).
Tensor segment_sum(const Tensor& a, std::span<const std::int64_t> segment_ids,
                   std::size_t num_segments);

Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
Tensor max(const Tensor& a, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor softmax(const Tensor& a, int axis);
// Normalizes the last axis; gamma and beta have the size of that axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);
// x: [N, C, H, W]; gamma, beta: [C].
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  Real eps = 1e-5);
// Identity when !train or p == 0; otherwise zeroes with probability p and
// scales survivors by 1 / (1 - p).
Tensor dropout(const Tensor& a, Real p, bool train, std::mt19937_64& rng);

// x: [N, C, H, W], weight: [O, C, k, k], bias: [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
// 2x bilinear upsampling of [N, C, H, W] with half-pixel centers (align_corners = false).
Tensor bilinear_upsample_2x(const Tensor& x);

}  // namespace labelformer::nn
