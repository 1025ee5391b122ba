/*
 * Copyright 2026 The fimpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fimpp/tensor.hpp"

namespace fimpp {

// Differentiable operations. Every op checks its output for NaN/Inf and
// throws NumericalError if one appears. Elementwise binary ops accept either
// equal shapes or a scalar on one side; there is no general broadcasting.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x[r, c] + bias[c] for every row r.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& a, double factor);
Tensor negate(const Tensor& a);
Tensor exp(const Tensor& a);
/// Throws DomainError on non-positive input.
Tensor log(const Tensor& a);
/// log(1 + e^x), with x > 30 returning x.
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor sum(const Tensor& a);
/// Column means over rows: [r, c] -> [1, c].
Tensor mean_rows(const Tensor& a);

Tensor softmax_lastdim(const Tensor& x, const std::optional<Mask>& mask = std::nullopt);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// out[i] = table[indices[i]].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

/// One attention block: query rows [q_begin, q_begin + q_count) attend to key
/// rows [k_begin, k_begin + k_count). Causal blocks need q_count == k_count
/// and let query i see keys 0..i only.
struct AttentionBlock {
  std::size_t q_begin = 0;
  std::size_t q_count = 0;
  std::size_t k_begin = 0;
  std::size_t k_count = 0;
  bool causal = false;
};

/// Scaled dot-product attention over n_heads column groups of q/k/v, applied
/// independently per block. Query rows outside every block produce zeros.
/// Equivalent to per-head softmax_lastdim(q k^T / sqrt(d_head), mask) v.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            std::span<const AttentionBlock> blocks);

}  // namespace fimpp
