// Copyright 2026 The FLMD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLMD_DIFFKERNEL_OPS_HPP
#define FLMD_DIFFKERNEL_OPS_HPP

#include <cstddef>
#include <vector>

#include "flmd/diffkernel/tape.hpp"

// Differentiable ops over rank-2 tensors. Rows are samples; weights are
// stored input-major ([in x out]) so a layer is `x W + b`.
namespace flmd::dk {

inline constexpr double kProbClamp = 1e-7;

// Elementwise / linear algebra.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// a [m x n] + b [1 x n] on every row.
Var add_row(Var a, Var b);
Var affine(Var x, Var w, Var b);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var square(Var a);

// Softmax along `axis` (0: down columns, 1: across rows).
Var softmax(Var a, int axis = 1);

// Reductions.
Var sum(Var a);
Var mean(Var a);
// [m x n] -> [m x 1]
Var row_sum(Var a);
// Sum of squared entries, as a 1 x 1.
Var squared_norm(Var a);

// Shape plumbing.
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
// Row r*n + s of the result is row r of parts[s].
Var interleave_rows(const std::vector<Var>& parts);
// Stacks `times` copies of a vertically.
Var tile_rows(Var a, std::size_t times);
// Mean over consecutive groups of `group` rows.
Var group_mean_rows(Var a, std::size_t group);
// out[r, j] = sum_u h[r, j*k + u] * w[0, j*k + u]: F independent k-wide dots.
Var block_rowdot(Var h, Var w, std::size_t k);

// Variational pieces.
// KL(N(mu, diag sigma^2) || N(0, I)) per row, [m x 1]. Throws DomainError
// unless sigma > 0.
Var gaussian_kl_rows(Var mu, Var sigma);
Var gaussian_kl(Var mu, Var sigma);
// mu + sigma * eps with eps held fixed.
Var reparameterize(Var mu, Var sigma, const Tensor& eps);

// Losses. Labels are constants in {0, 1}.
// Elementwise -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-7, 1 - 1e-7].
Var bce_elementwise(Var prob, const Tensor& y);
Var bce(Var prob, const Tensor& y);
// Binary cross-entropy on logits (numerically stable form).
Var cross_entropy_elementwise(Var logits, const Tensor& y);
Var cross_entropy(Var logits, const Tensor& y);
// Per-row negative log-likelihood of x under per-feature likelihoods:
// gaussian features use unit variance, bernoulli features read `pred` as a
// logit. Returns [m x 1].
Var reconstruction_nll_rows(Var pred, const Tensor& x, const std::vector<bool>& bernoulli);

// Scaled dot-product attention inside consecutive groups of `group` rows,
// with `heads` heads splitting the columns. q, k, v: [N x d], N % group == 0.
Var grouped_attention(Var q, Var k, Var v, std::size_t heads, std::size_t group);
// Attention weights used by grouped_attention (not differentiable); one
// [group x group] row-stochastic block per (group, head), row-major.
std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, std::size_t heads,
                                      std::size_t group);

// Non-graph helpers on plain tensors.
double gaussian_kl_value(const Tensor& mu, const Tensor& sigma);
double bce_value(double prob, int y);

}  // namespace flmd::dk

#endif  // FLMD_DIFFKERNEL_OPS_HPP
