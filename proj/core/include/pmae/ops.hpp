// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable kernels. Every function records its adjoint when at least
// one input requires grad; otherwise the result is a plain constant.

#include <cstddef>
#include <cstdint>
#include <span>

#include "pmae/tensor.hpp"

namespace pmae {

// [m x k] . [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// Adds a vector of length last-extent to every row.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// x is [groups*rows x n]; `table` is [rows x n] and is added to each group.
template <typename T>
Tensor<T> add_tiled(const Tensor<T>& x, const Tensor<T>& table);

// Exact erf form: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Normalises over the last axis with the biased variance, then applies
// gain and bias (both of length last-extent).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-6));

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Row gather over a 2-D tensor. An index of -1 copies the single row of
/// `fill` instead (used for class and mask tokens), so the fill row receives
/// the summed adjoint of every position it was copied into.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::ptrdiff_t> rows);
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::ptrdiff_t> rows, const Tensor<T>& fill);

/// Multi-head scaled dot-product attention over `batch` independent
/// sequences. q, k, v are [batch*tokens x dim]; heads split the columns.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t batch,
                               std::size_t heads);

// x is [groups*rows x n]; each group is multiplied by its constant factor.
template <typename T>
Tensor<T> scale_groups(const Tensor<T>& x, std::span<const T> factors);

/// Mean over selected rows of the per-row mean squared error. `target` is
/// treated as a constant.
template <typename T>
Tensor<T> masked_row_mse(const Tensor<T>& prediction, const Tensor<T>& target,
                         std::span<const std::uint8_t> selected_rows);

/// Batch-mean cross-entropy of [batch x classes] logits against targets
/// smoothed to (1 - eps) + eps/K on the true class and eps/K elsewhere.
template <typename T>
Tensor<T> smoothed_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels, T epsilon);

}  // namespace pmae
