// Copyright (c) 2026, The hawaii-kd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op validates shapes, checks its output for
// non-finite values and, when a tape is active and some input requires a
// gradient, records its backward rule.

#ifndef HAWAII_OPS_HPP
#define HAWAII_OPS_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hawaii/tensor.hpp"

namespace hawaii {

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// Elementwise; operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// x[n×k] + bias broadcast over rows; bias has shape [k] or [1×k].
Tensor add_row(const Tensor& x, const Tensor& bias);
/// Row t of x[n×k] multiplied by s[t]; s has shape [n] or [n×1].
Tensor scale_rows(const Tensor& x, const Tensor& s);

/// Exact Gaussian error linear unit, 0.5·x·(1 + erf(x/√2)).
Tensor gelu(const Tensor& x);
/// Row-wise normalization with learned gain and bias of shape [k].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);
/// Column means over rows: [p×q] -> [1×q].
Tensor mean_rows(const Tensor& x);

// Reductions to a rank-0 scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor mse(const Tensor& pred, const Tensor& target);
/// [m×D] pair -> [m], element j = mean_d (pred[j,d] - target[j,d])².
Tensor per_token_mse(const Tensor& pred, const Tensor& target);
/// Mean over positions of -log softmax(logits[t])[targets[t]].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& tensors, std::size_t axis);
/// Rows [begin, end) of a rank-2 tensor.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Gathers rows by index (repeats allowed; gradients accumulate).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// x[n×E] -> [n], element t = x[t, index[t]].
Tensor pick(const Tensor& x, std::span<const std::size_t> index);
/// base + Σ_k scatter(parts[k] into rows[k]); repeated rows add up. Output
/// shape equals base.
Tensor index_add_rows(const Tensor& base, const std::vector<Tensor>& parts,
                      const std::vector<std::vector<std::size_t>>& rows);

/// Space-to-depth on a [g×g×C] map with factor r: output [(g/r)×(g/r)×(C·r²)],
/// where input (y·r+dy, x·r+dx, c) lands at output (y, x, c·r² + dy·r + dx).
Tensor pixel_unshuffle(const Tensor& feat, std::size_t r);
/// Inverse of pixel_unshuffle.
Tensor pixel_shuffle(const Tensor& feat, std::size_t r);

/// Central-difference gradient of a scalar function. `x` is perturbed in place
/// one element at a time and restored bit-exactly before returning.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, Tensor& x,
                              double eps);

}  // namespace hawaii

#endif  // HAWAII_OPS_HPP
