#pragma once

// Differentiable tensor operations. Shape errors throw DimensionError naming
// the offending shapes. Axis arguments accept negative values counted from
// the end.

#include <cstddef>
#include <vector>

#include "sst/tensor.hpp"

namespace sst {

// Elementwise binary ops with NumPy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
// x * Phi(x), exact erf form.
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduces one axis away.
Tensor sum(const Tensor& x, std::ptrdiff_t axis);

// [..., m, k] x [..., k, n] -> [..., m, n]; batch extents broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length);

Tensor softmax(const Tensor& x, std::ptrdiff_t axis);
Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis);

// Normalises over the last axis; eps sits inside the square root.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Cross-correlation. x: [n, c_in, t], kernel: [c_out, c_in, k].
Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride = 1,
              std::size_t padding = 0);

// Segment i covers [floor(i*t/out_len), floor((i+1)*t/out_len)).
Tensor adaptive_avg_pool1d(const Tensor& x, std::size_t out_len);

}  // namespace sst
