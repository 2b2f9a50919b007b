#pragma once

#include <span>
#include <vector>

#include "pfxlm/tensor.hpp"

// Differentiable operations over Tensor. Each one checks extents, computes
// its forward value, rejects non-finite results, and records a backward rule
// on the active tape when an input requires gradients.

namespace pfxlm {

/// a[m x k] * b[k x n].
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a);

/// Elementwise sum of equally-sized tensors. Result takes the shape of `a`.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Adds a length-cols vector to every row of `x`.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias);

/// Elementwise product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

/// Adds a constant additive mask whose entries may be -inf. The only op whose
/// result is allowed to hold infinities.
template <typename Scalar>
Tensor<Scalar> add_mask(const Tensor<Scalar>& scores, const Matrix<Scalar>& mask);

/// Row-wise softmax, stabilized by subtracting the row maximum. -inf entries
/// map to exactly 0; a row with no finite entry throws DegenerateRowError.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x);

/// Per-row normalization to zero mean and unit (population) variance, then
/// gamma * x + beta.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps = Scalar(1e-5));

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

/// tanh approximation used by GPT-2.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x);

/// Rows of `table` selected by `ids`; gradients scatter-add back into the table.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& table, std::span<const TokenId> ids);

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count);

template <typename Scalar>
Tensor<Scalar> concat_cols(std::span<const Tensor<Scalar>> parts);

/// Sum of all entries, as a scalar.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

/// Mean over unmasked rows of -log softmax(logits[row])[targets[row]].
/// Throws EmptyLossError when no row is unmasked.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const TokenId> targets,
                             const std::vector<bool>& loss_mask);

}  // namespace pfxlm
