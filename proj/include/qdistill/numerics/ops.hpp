// Copyright 2026 The qdistill Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Differentiable primitives. Each returns a new tensor; when a GradTape is
// active and any input requires gradients, the primitive is recorded.
// Broadcasting is limited to the bias-style ops below (last-dimension vector
// added to every row) and row-wise reductions.
//
// Every result is checked for finiteness; NaN or Inf raises NumericError.

#include <cstdint>
#include <span>
#include <vector>

#include "qdistill/numerics/tensor.hpp"

namespace qdistill {

// a[m x k] * b[k x n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Swaps the two axes of a matrix.
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

// x[..., in] * w[in x out] + bias[out], leading axes flattened.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);

// x[..., n] + bias[n]
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x);

// Numerically stable (max-subtracted) softmax along `axis`.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);

// Normalizes each row over the last dimension, then applies gamma/beta.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps);

// x * Phi(x) with the exact error function.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

// Gathers rows of table[V x D] -> [ids.size() x D]. InputError on id >= V.
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table,
                         std::span<const std::int32_t> ids);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

// [B, L, H*dh] -> [B*H, L, dh]
template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, std::size_t heads);

// [B*H, L, dh] -> [B, L, H*dh]
template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& x, std::size_t heads);

// Batched a[G, m, k] * b[G, k, n].
template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Batched a[G, m, k] * b[G, n, k]^T.
template <typename T>
BasicTensor<T> bmm_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);

// scores[B*H, Lq, Lk] + key_bias[B, Lk] broadcast over heads and queries.
// The bias is a constant (no gradient flows into it).
template <typename T>
BasicTensor<T> add_key_bias(const BasicTensor<T>& scores,
                            std::span<const T> key_bias, std::size_t heads);

// x[B, L, D] averaged over positions where mask[B, L] == 1.
// ContractError if a row has no unmasked position.
template <typename T>
BasicTensor<T> masked_mean(const BasicTensor<T>& x,
                           std::span<const std::uint8_t> mask);

// x[B, L, D] -> x[:, position, :]
template <typename T>
BasicTensor<T> select_position(const BasicTensor<T>& x, std::size_t position);

// Euclidean norm of each row of x[B, D] -> [B]. The gradient at a zero row is
// taken as zero (a valid subgradient).
template <typename T>
BasicTensor<T> row_norm(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

// Mean over rows of -log softmax(logits[B, C])[row, targets[row]].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits,
                             std::span<const std::size_t> targets);

}  // namespace qdistill
