#pragma once

#include <cstdint>
#include <span>

#include "permattn/position_encoding.hpp"
#include "permattn/tensor.hpp"

namespace permattn {

inline constexpr double kDefaultEpsilon = 1e-3;

struct FeatureMapConfig {
  double epsilon = kDefaultEpsilon;
  std::size_t input_dim = 0;    // d
  std::size_t feature_dim = 0;  // m, 4*d unless set

  static FeatureMapConfig for_head_dim(std::size_t d, double epsilon = kDefaultEpsilon);
  void validate() const;
};

// phi(x) = max(x W, 0) + epsilon with a d -> m lift W.
//
// The lift is the identity when m == d. Otherwise it is a seeded Gaussian
// projection with variance 1/d, fixed unless constructed trainable.
class FeatureMap {
 public:
  FeatureMap(FeatureMapConfig cfg, std::uint64_t seed, bool trainable = false);
  FeatureMap(FeatureMapConfig cfg, Tensor lift);

  const FeatureMapConfig& config() const { return cfg_; }
  const Tensor& lift() const { return lift_; }

  // [..., d] -> [..., m]
  Tensor operator()(const Tensor& x) const;

  // encode_heads((*this)(x), heads, side, offset) for x [N, L, d], written in
  // each head's cycle basis: column a of a slice using head h holds feature
  // cycle_order(h.spec())[a]. The permutation then acts as a rotation of
  // contiguous blocks. Query-key products within a head, and so attention
  // outputs, are the same as in the standard basis.
  Tensor encoded(const Tensor& x, std::span<const HeadEncoding> heads, Side side,
                 std::size_t offset = 0) const;

 private:
  FeatureMapConfig cfg_;
  Tensor lift_;  // [d, m]
};

Tensor phi(const Tensor& x, const FeatureMap& map);

}  // namespace permattn
