#pragma once

// Reference implementations used only by tests. Everything here is written
// with plain loops over std::vector and shares no code with the library, so
// agreement between the two is evidence rather than tautology.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Perm = std::vector<std::uint32_t>;

// Row-major [p, q] x [q, r].
Vec matmul(const Vec& a, const Vec& b, std::size_t p, std::size_t q, std::size_t r);

// pi applied p times as a function: out[i] = pi(pi(...pi(i))).
Perm perm_power(const Perm& pi, std::size_t p);

// Dense permutation matrix with P[i][pi[i]] = 1, row-major.
Vec dense_perm(const Perm& pi);

// Smallest t >= 1 with pi^t = identity, by iteration. Small m only.
std::uint64_t brute_order(const Perm& pi);

// E[order] of a uniform random permutation of n elements, exact up to
// floating point, by summing over cycle types.
double expected_order(std::size_t n);

// Explicit attention over one head. qf, kf are [L, m], v is [L, d]. Each
// similarity is computed from scratch for its (i, j) pair.
Vec kernel_attention(const Vec& qf, const Vec& kf, const Vec& v, std::size_t L, std::size_t m,
                     std::size_t d, bool causal, Vec* alpha = nullptr);

// Same, with positions p_i = i + offset and
// sim(i, j) = sum_x r^p_i qf_i[pi^p_i(x)] * r^-p_j kf_j[pi^p_j(x)]
// evaluated term by term.
Vec permuted_attention(const Vec& qf, const Vec& kf, const Vec& v, std::size_t L, std::size_t m,
                       std::size_t d, const Perm& pi, double r, bool causal,
                       std::size_t offset = 0);

// exp(q.k / sqrt(d)) attention over one head, q and k [L, d].
Vec softmax_attention(const Vec& q, const Vec& k, const Vec& v, std::size_t L, std::size_t d,
                      bool causal, Vec* alpha = nullptr);

// Central differences of f around x, one coordinate at a time.
Vec numeric_gradient(const std::function<double(const Vec&)>& f, Vec x, double step = 1e-5);

double max_abs_diff(const Vec& a, const Vec& b);

}  // namespace oracle
