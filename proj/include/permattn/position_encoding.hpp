#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "permattn/permutation.hpp"
#include "permattn/tensor.hpp"

namespace permattn {

enum class Side { Query, Key };

// Per-head position transform: a fixed permutation and a decay factor r.
// Bidirectional heads use r = 1; causal heads use 0 < r <= 1 (r = 1 is the
// undecayed causal form).
class HeadEncoding {
 public:
  HeadEncoding(PermutationSpec spec, double r, std::size_t head_index, bool causal);

  const PermutationSpec& spec() const { return spec_; }
  double r() const { return r_; }
  std::size_t head_index() const { return head_index_; }
  bool causal() const { return causal_; }

 private:
  PermutationSpec spec_;
  double r_;
  std::size_t head_index_;
  bool causal_;
};

// H heads; head h gets permutation seed base_seed + h and a decay evenly
// spaced over [r_min, r_max]. Bidirectional heads all get r = 1 and the range
// must be exactly [1, 1].
std::vector<HeadEncoding> assign_head_params(std::size_t heads, std::size_t m, double r_min,
                                             double r_max, std::uint64_t base_seed, bool causal);

// Heads with identity permutations and r = 1 (plain Performer).
std::vector<HeadEncoding> identity_heads(std::size_t heads, std::size_t m, bool causal);

// Applies the position transform to post-phi features [L, m]. The token at
// row t sits at position p = offset + t and is gathered by pi^p; queries are
// scaled by r^p and keys by r^-p. The explicit r^-p factor overflows for
// large p when r < 1, so that case is meant for small-L verification; the
// causal attention path folds the decay into its recurrence instead.
// check_positive rejects inputs with a non-positive entry.
Tensor encode(const Tensor& features, const HeadEncoding& enc, Side side, std::size_t offset = 0,
              bool check_positive = false);

// encode() over [N, L, m] where slice n uses heads[n % heads.size()].
Tensor encode_heads(const Tensor& features, std::span<const HeadEncoding> heads, Side side,
                    std::size_t offset = 0);

struct Position2D {
  std::size_t x = 0;
  std::size_t y = 0;
};

struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;

  bool contains(const Position2D& p) const { return p.x < width && p.y < height; }
};

// Two commuting permutations for image-like inputs: pi_x moves with the
// column, pi_y with the row.
class TwoDEncoding {
 public:
  // Rejects pairs that do not commute.
  TwoDEncoding(PermutationSpec pi_x, PermutationSpec pi_y);

  // pi_x permutes only indices [0, m/2), pi_y only [m/2, m); disjoint
  // supports commute.
  static TwoDEncoding disjoint(std::size_t m, std::uint64_t seed);

  const PermutationSpec& pi_x() const { return pi_x_; }
  const PermutationSpec& pi_y() const { return pi_y_; }
  std::size_t size() const { return pi_x_.size(); }

  // Index array of P_x^x P_y^y.
  std::vector<Index> index_for(const Position2D& p) const;

 private:
  PermutationSpec pi_x_;
  PermutationSpec pi_y_;
};

bool permutations_commute(const PermutationSpec& a, const PermutationSpec& b);

// features [..., N, m] with N = positions.size(); every leading slice uses
// the same encoding.
Tensor encode_2d(const Tensor& features, const TwoDEncoding& enc,
                 std::span<const Position2D> positions, const Grid& grid);

// encode_2d over [N, P, m] where slice n uses encs[n % encs.size()].
Tensor encode_2d_heads(const Tensor& features, std::span<const TwoDEncoding> encs,
                       std::span<const Position2D> positions, const Grid& grid);

}  // namespace permattn
