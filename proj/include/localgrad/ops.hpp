#pragma once

#include <span>

#include "localgrad/tensor.hpp"

namespace localgrad {

// Differentiable primitives. Each op records a node on the tape shared by its
// non-constant inputs; with all-constant inputs nothing is recorded. Shape
// violations throw ShapeError naming the primitive, the expected shape and
// the actual one.

/// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise sum. `b` may also be rank-1 with b.size == a.dim(1), in which
/// case it broadcasts over axis 0 and any trailing spatial axes (per-feature
/// or per-channel bias).
Tensor add(const Tensor& a, const Tensor& b);

/// Elementwise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);

/// max(x, 0); derivative at exactly 0 is 0.
Tensor relu(const Tensor& x);

/// Stride-1 cross-correlation. x: [n x c x h x w], w: [o x c x k x k].
/// `padding` zero-pads each spatial border; padding = (k-1)/2 is "same".
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t padding = 0);

/// [n x c x h x w] -> [n x c], mean over spatial positions.
Tensor avgpool_global(const Tensor& x);

/// [n x ...] -> [n x prod(...)]
Tensor flatten(const Tensor& x);

Tensor scale(const Tensor& x, double factor);

/// Sum of all entries as a scalar.
Tensor sum(const Tensor& x);

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Identity forward; gradient stops here.
Tensor stop_gradient(const Tensor& x);

/// x * w + b for x: [n x in], w: [in x out], b: [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Row-wise argmax of [n x classes] logits.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace localgrad
