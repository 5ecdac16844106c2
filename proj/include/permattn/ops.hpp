#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "permattn/tensor.hpp"

// Differentiable operations. Every function records a backward rule when any
// input requires grad. Reductions run in a fixed order, so repeated runs give
// identical results; matrix products use Eigen's blocked kernels.
namespace permattn::ops {

inline constexpr double kReciprocalFloor = 1e-300;

// [..., p, q] x [..., q, r] -> [..., p, r]; leading extents must be equal.
Tensor matmul(const Tensor& a, const Tensor& b);

// [..., p, q]^T x [..., p, r] -> [..., q, r] without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// Swaps the last two axes.
Tensor transpose(const Tensor& x);

// Reorders axes: out.shape[i] = x.shape[perm[i]].
Tensor permute_axes(const Tensor& x, std::span<const std::size_t> perm);

Tensor reshape(const Tensor& x, Shape shape);

Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

// 1/x; any |x| below floor raises NumericGuardError instead of producing Inf.
Tensor reciprocal(const Tensor& x, double floor = kReciprocalFloor);

// Sum along one axis. keepdim leaves a unit extent in its place.
Tensor sum_over_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Numerically stable softmax over the last axis; -inf entries get weight 0.
Tensor softmax_last_dim(const Tensor& x);

// Multiplies each last-axis row of x by the matching entry of s, where
// s.shape == x.shape without its last axis (or with a trailing 1).
Tensor mul_rows(const Tensor& x, const Tensor& s);

// out[..., i] = x[..., idx[i]]; idx must be a permutation of 0..m-1.
Tensor gather_last_dim(const Tensor& x, std::span<const std::uint32_t> idx);

// Row-wise gather with a separate index array per last-axis row:
// idx holds numel(x) entries, row r uses idx[r*m .. r*m+m). Rows are assumed
// to be permutations (callers pass cached permutation powers); set validate
// to check them.
Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> idx,
                   bool validate = false);

// Rows of table selected by ids: [V, D] -> [ids.size(), D].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

// Mean negative log-likelihood of targets under softmax(logits), logits [N, C].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// Checks idx is a bijection on 0..idx.size()-1.
bool is_permutation(std::span<const std::uint32_t> idx);

}  // namespace permattn::ops
