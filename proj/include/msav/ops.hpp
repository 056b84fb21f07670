#pragma once

#include <span>

#include "msav/rng.hpp"
#include "msav/tensor.hpp"

namespace msav {

enum class Mode { train, eval };

// Differentiable tensor operations. Each takes an optional tape; when the
// tape is null (or no input requires grad) only the forward value is
// computed. Elementwise ops broadcast NumPy-style (right-aligned); the
// gradient of a broadcast operand is the output gradient summed over the
// broadcast axes.

Tensor add(const Tensor& a, const Tensor& b, Tape* tape);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape);

/// 2-D matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape);

/// Swaps the last two axes (plain transpose for 2-D tensors).
Tensor transpose_last2(const Tensor& a, Tape* tape);

Tensor reshape(const Tensor& a, Shape shape, Tape* tape);

Tensor relu(const Tensor& a, Tape* tape);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis, Tape* tape);

/// ln(max(x, floor)); gradient is 1/x where x >= floor, else 0.
Tensor log_clamped(const Tensor& a, float floor, Tape* tape);

/// Sum of all elements (64-bit accumulation) as a [1] tensor.
Tensor sum_all(const Tensor& a, Tape* tape);

Tensor scale(const Tensor& a, float c, Tape* tape);

/// Inverted dropout: train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); eval mode (or rate 0) is the identity.
Tensor dropout(const Tensor& a, float rate, Mode mode, Rng* rng, Tape* tape);

/// x[i, ...] for a fixed leading index -> tensor of shape x.shape[1:].
Tensor select_front(const Tensor& a, std::size_t index, Tape* tape);

/// Stacks equal-shaped tensors along a new leading axis.
Tensor stack_front(std::span<const Tensor> parts, Tape* tape);

/// Slice of the last axis: x[..., start : start+len].
Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len,
                  Tape* tape);

/// Concatenation along the last axis.
Tensor concat_last(std::span<const Tensor> parts, Tape* tape);

}  // namespace msav
