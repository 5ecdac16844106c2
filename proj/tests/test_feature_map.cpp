#include <gtest/gtest.h>

#include <algorithm>
#include <span>

#include "permattn/errors.hpp"
#include "permattn/feature_map.hpp"
#include "permattn/ops.hpp"
#include "permattn/position_encoding.hpp"
#include "support/oracles.hpp"

using namespace permattn;

TEST(FeatureMap, IdentityLiftMatchesFormula) {
  const FeatureMap fm(FeatureMapConfig{1e-3, 2, 2}, 0);
  const Tensor out = fm(Tensor::from({1, 2}, {-1.0, 2.0}));
  EXPECT_DOUBLE_EQ(out.at({0, 0}), 0.001);
  EXPECT_DOUBLE_EQ(out.at({0, 1}), 2.001);
}

TEST(FeatureMap, DefaultWidthIsFourTimesHeadDim) {
  const auto cfg = FeatureMapConfig::for_head_dim(16);
  EXPECT_EQ(cfg.feature_dim, 64u);
  EXPECT_EQ(cfg.epsilon, 1e-3);
}

TEST(FeatureMap, OutputsAtLeastEpsilon) {
  const FeatureMap fm(FeatureMapConfig::for_head_dim(8), 3);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Tensor out = fm(Tensor::randn({4, 8}, s, 3.0));
    EXPECT_GE(*std::min_element(out.data().begin(), out.data().end()), 1e-3);
  }
}

TEST(FeatureMap, MatchesExplicitLift) {
  const FeatureMap fm(FeatureMapConfig::for_head_dim(4), 5);
  const Tensor x = Tensor::randn({3, 4}, 6);
  const auto xv = std::vector<double>(x.data().begin(), x.data().end());
  const auto wv = std::vector<double>(fm.lift().data().begin(), fm.lift().data().end());
  auto ref = oracle::matmul(xv, wv, 3, 4, 16);
  for (auto& v : ref) v = std::max(v, 0.0) + 1e-3;
  const Tensor out = fm(x);
  EXPECT_LT(oracle::max_abs_diff({out.data().begin(), out.data().end()}, ref), 1e-15);
}

TEST(FeatureMap, LeadingAxesPreserved) {
  const FeatureMap fm(FeatureMapConfig::for_head_dim(4), 1);
  EXPECT_EQ(fm(Tensor::randn({2, 5, 4}, 1)).shape(), (Shape{2, 5, 16}));
}

TEST(FeatureMap, DenominatorLowerBound) {
  // Every key feature is >= eps, so q.sum_j k_j >= L * eps * sum(q) >= L * eps * min(q).
  const FeatureMap fm(FeatureMapConfig::for_head_dim(4), 2);
  const std::size_t L = 16;
  const Tensor qf = fm(Tensor::randn({L, 4}, 3)), kf = fm(Tensor::randn({L, 4}, 4));
  const Tensor den = ops::matmul(qf, ops::sum_over_axis(ops::transpose(kf), 1, true));
  const double min_q = *std::min_element(qf.data().begin(), qf.data().end());
  for (double d : den.data()) EXPECT_GE(d, L * 1e-3 * min_q);
}

TEST(FeatureMap, Errors) {
  const FeatureMap fm(FeatureMapConfig::for_head_dim(4), 1);
  EXPECT_THROW(fm(Tensor::randn({2, 3}, 1)), DimensionError);
  EXPECT_THROW(FeatureMap(FeatureMapConfig{0.0, 4, 16}, 1), UsageError);
  EXPECT_THROW(FeatureMap(FeatureMapConfig{1e-3, 4, 2}, 1), UsageError);
  EXPECT_THROW(FeatureMap(FeatureMapConfig{1e-3, 4, 16}, Tensor::zeros({4, 8})), DimensionError);
}

TEST(FeatureMap, TrainableLiftReceivesGradient) {
  const FeatureMap fm(FeatureMapConfig::for_head_dim(2), 1, true);
  ops::sum(fm(Tensor::randn({3, 2}, 2))).backward();
  EXPECT_TRUE(fm.lift().has_grad());
  const FeatureMap fixed(FeatureMapConfig::for_head_dim(2), 1);
  EXPECT_FALSE(fixed.lift().requires_grad());
}

namespace {

oracle::Vec vals(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Columns of slice n moved back from head n % H's cycle basis.
oracle::Vec to_standard_basis(const Tensor& enc, std::span<const HeadEncoding> heads) {
  const std::size_t N = enc.dim(0), L = enc.dim(1), m = enc.dim(2);
  oracle::Vec out(enc.numel());
  const auto v = enc.data();
  for (std::size_t n = 0; n < N; ++n) {
    const auto order = cycle_order(heads[n % heads.size()].spec());
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t a = 0; a < m; ++a) out[(n * L + t) * m + order[a]] = v[(n * L + t) * m + a];
    }
  }
  return out;
}

}  // namespace

TEST(EncodedFeatures, CycleOrderListsCyclesInSequence) {
  const PermutationSpec pi({2, 0, 1, 3, 5, 4});
  EXPECT_EQ(cycle_order(pi), (std::vector<Index>{0, 2, 1, 3, 4, 5}));
}

TEST(EncodedFeatures, MatchesEncodeAfterPhiInCycleBasis) {
  const FeatureMap fm(FeatureMapConfig::for_head_dim(4), 3);
  for (bool causal : {false, true}) {
    const auto heads = causal ? assign_head_params(2, 16, 0.9, 0.95, 4, true)
                              : assign_head_params(2, 16, 1.0, 1.0, 4, false);
    const Tensor x = Tensor::randn({4, 9, 4}, 5);
    for (std::size_t offset : {0u, 5u, 40u}) {
      for (Side side : {Side::Query, Side::Key}) {
        const Tensor ref = encode_heads(fm(x), heads, side, offset);
        const auto got = to_standard_basis(fm.encoded(x, heads, side, offset), heads);
        EXPECT_LT(oracle::max_abs_diff(got, vals(ref)), 1e-12 * (causal ? 1e3 : 1.0));
      }
    }
  }
}

TEST(EncodedFeatures, InnerProductsMatchStandardBasis) {
  const FeatureMap fm(FeatureMapConfig::for_head_dim(4), 3);
  const auto heads = assign_head_params(3, 16, 1.0, 1.0, 8, false);
  const Tensor q = Tensor::randn({3, 7, 4}, 1), k = Tensor::randn({3, 7, 4}, 2);
  const Tensor fused = ops::matmul(fm.encoded(q, heads, Side::Query),
                                   ops::transpose(fm.encoded(k, heads, Side::Key)));
  const Tensor plain = ops::matmul(encode_heads(fm(q), heads, Side::Query),
                                   ops::transpose(encode_heads(fm(k), heads, Side::Key)));
  EXPECT_LT(oracle::max_abs_diff(vals(fused), vals(plain)), 1e-12);
}

TEST(EncodedFeatures, GradientsMatchUnfusedPath) {
  const auto heads = assign_head_params(2, 8, 0.9, 0.99, 6, true);
  const Tensor x0 = Tensor::randn({2, 5, 2}, 7);
  const Tensor c = Tensor::randn({2, 5, 8}, 8);
  auto grads = [&](bool fused) {
    const FeatureMap fm(FeatureMapConfig{1e-3, 2, 8}, 9, true);
    Tensor x = Tensor::from(x0.shape(), vals(x0), true);
    Tensor f = fused ? fm.encoded(x, heads, Side::Key, 3) : encode_heads(fm(x), heads, Side::Key, 3);
    // Compare in the standard basis: weight fused columns by c relabeled.
    Tensor w = c;
    if (fused) {
      oracle::Vec cv = vals(c), wv(cv.size());
      for (std::size_t n = 0; n < 2; ++n) {
        const auto order = cycle_order(heads[n].spec());
        for (std::size_t t = 0; t < 5; ++t) {
          for (std::size_t a = 0; a < 8; ++a) wv[(n * 5 + t) * 8 + a] = cv[(n * 5 + t) * 8 + order[a]];
        }
      }
      w = Tensor::from(c.shape(), wv);
    }
    ops::sum(ops::mul(f, w)).backward();
    oracle::Vec g(x.grad().begin(), x.grad().end());
    g.insert(g.end(), fm.lift().grad().begin(), fm.lift().grad().end());
    return g;
  };
  EXPECT_LT(oracle::max_abs_diff(grads(true), grads(false)), 1e-12);
}

TEST(EncodedFeatures, Errors) {
  const FeatureMap fm(FeatureMapConfig::for_head_dim(4), 1);
  const auto heads = assign_head_params(2, 16, 1.0, 1.0, 0, false);
  EXPECT_THROW(fm.encoded(Tensor::randn({3, 2, 4}, 1), heads, Side::Query), DimensionError);
  EXPECT_THROW(fm.encoded(Tensor::randn({2, 4}, 1), heads, Side::Query), DimensionError);
  const auto wrong = assign_head_params(2, 8, 1.0, 1.0, 0, false);
  EXPECT_THROW(fm.encoded(Tensor::randn({2, 2, 4}, 1), wrong, Side::Query), DimensionError);
}
