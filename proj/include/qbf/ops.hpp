#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qbf/tensor.hpp"

namespace qbf {

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// x: [N x F] or [N x F x H x W]; bias: [F], added along axis 1.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// x W^T + b with W stored as [out x in].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// max(0, x); gradient is 0 where x <= 0.
Tensor relu(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Collapses every axis after the first.
Tensor flatten(const Tensor& x);

struct Conv2dGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t filters, kernel_h, kernel_w;
  std::size_t stride, pad;
  std::size_t out_h, out_w;
};

Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad);

// Cross-correlation of x [N x C x H x W] with w [F x C x kh x kw]; im2col + GEMM.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t pad = 0);

// Same mapping with plain nested loops and no history. Accumulates in the same
// order as conv2d, so results are bit-identical.
Tensor conv2d_direct(const Tensor& x, const Tensor& w, std::size_t stride = 1, std::size_t pad = 0);

// Non-overlapping window max pool over the last two axes; ties go to the first
// element in row-major window order.
Tensor maxpool2d(const Tensor& x, std::size_t window = 2);

// Row-wise softmax of [N x C] logits, values only.
Tensor softmax(const Tensor& logits);

// Mean over the batch of -log softmax(logits)[target], max-shifted.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

// Row-wise argmax; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace qbf
