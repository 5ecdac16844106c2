#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "permattn/feature_map.hpp"
#include "permattn/position_encoding.hpp"
#include "permattn/tensor.hpp"

namespace permattn {

// Guard on attention denominators. Features are >= epsilon, so reaching it
// means a bug upstream rather than bad data.
inline constexpr double kDenominatorFloor = 1e-30;

struct AttentionConfig {
  std::size_t length = 0;   // L
  std::size_t heads = 0;    // H
  std::size_t d_model = 0;  // H * d_head
  std::size_t d_head = 0;
  std::size_t feature_dim = 0;  // m
  bool causal = false;
  std::vector<HeadEncoding> head_encodings;
  FeatureMapConfig fmap;

  // m = 4 * d_head, heads from assign_head_params.
  static AttentionConfig make(std::size_t length, std::size_t heads, std::size_t d_head,
                              bool causal, double r_min, double r_max, std::uint64_t seed,
                              double epsilon = kDefaultEpsilon, std::size_t feature_dim = 0);
  void validate() const;
};

struct ProjectionWeights {
  Tensor w_q;  // [d_model, d_model], q_i = W_q x_i
  Tensor w_k;
  Tensor w_v;

  static ProjectionWeights random(std::size_t d_model, std::uint64_t seed,
                                  bool requires_grad = false);
  static ProjectionWeights identity(std::size_t d_model);
};

struct Qkv {
  Tensor q;  // [H, L, d_head], or [B*H, L, d_head] for batched input
  Tensor k;
  Tensor v;
};

struct AttentionResult {
  Tensor out;    // [N, L, d]
  Tensor alpha;  // [N, L, L]; undefined when weights were not kept
};

// x_in [L, d_model] -> per-head q, k, v [H, L, d_head]. A leading batch axis
// [B, L, d_model] yields [B*H, L, d_head], batch-major.
Qkv project_qkv(const Tensor& x_in, const ProjectionWeights& w, std::size_t heads);

// [B*H, L, d_head] -> [B, L, H*d_head], or [L, H*d_head] when batch == 1 and
// keep_batch is false.
Tensor merge_heads(const Tensor& x, std::size_t heads, bool keep_batch = false);

// exp(q.k / sqrt(d)) similarity, causal positions j > i masked before
// normalization. Rows are processed one at a time so the full L x L matrix is
// only held when keep_weights is set or gradients are needed.
AttentionResult softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                                  bool keep_weights = true);

// Explicit L x L kernel attention phi(q_i).phi(k_j), normalized per row.
// The O(L^2) reference for both linear paths.
AttentionResult kernel_attention_quadratic(const Tensor& qf, const Tensor& kf, const Tensor& v,
                                           bool causal);

// Bidirectional linear attention: sums phi(k_j) v_j^T and phi(k_j) once and
// contracts each query against them.
Tensor kernel_attention_linear(const Tensor& qf, const Tensor& kf, const Tensor& v);

struct ScanStats {
  std::size_t state_floats_per_head = 0;  // peak recurrent state per head
  std::size_t state_allocations = 0;      // buffers allocated for that state
  std::size_t steps = 0;                  // positions streamed
};

// Causal attention with permutation encoding and decay folded into a
// left-to-right recurrence per head (slice n uses heads[n % H]):
//   S_i = r S_{i-1} + (P^i phi(k_i)) v_i^T,  z_i = r z_{i-1} + P^i phi(k_i)
//   out_i = (P^i phi(q_i))^T S_i / (P^i phi(q_i))^T z_i
// P^i is pi^(offset + i). State per head is m * (d + 1) values whatever L.
Tensor causal_linear_attention(const Tensor& qf, const Tensor& kf, const Tensor& v,
                               std::span<const HeadEncoding> heads, std::size_t offset = 0,
                               ScanStats* stats = nullptr);

// Full Performer pipeline: project, phi, linear (or causal prefix-sum)
// attention, merge heads. Output [L, d_model] (or [B, L, d_model]).
Tensor performer_attention(const Tensor& x_in, const ProjectionWeights& w, const FeatureMap& fmap,
                           std::size_t heads, bool causal);

// project -> phi -> permutation encode -> linear attention (bidirectional,
// r = 1) or the causal recurrence. offset shifts every token position.
Tensor permuteformer_attention(const Tensor& x_in, const ProjectionWeights& w,
                               const FeatureMap& fmap, const AttentionConfig& cfg,
                               std::size_t offset = 0);

// Bidirectional PermuteFormer over a 2D grid of tokens, one encoding per head.
Tensor permuteformer_attention_2d(const Tensor& x_in, const ProjectionWeights& w,
                                  const FeatureMap& fmap, std::size_t heads,
                                  std::span<const TwoDEncoding> encs,
                                  std::span<const Position2D> positions, const Grid& grid);

// Softmax reference pipeline with the same projections, output [L, d_model].
Tensor softmax_pipeline(const Tensor& x_in, const ProjectionWeights& w, std::size_t heads,
                        bool causal);

}  // namespace permattn
