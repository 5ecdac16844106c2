#include <gtest/gtest.h>

#include <cmath>

#include "permattn/attention.hpp"
#include "permattn/errors.hpp"
#include "permattn/ops.hpp"
#include "support/oracles.hpp"

using namespace permattn;

namespace {

using Vec = oracle::Vec;

Vec values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Vec slice(const Tensor& t, std::size_t n) {
  const std::size_t stride = t.numel() / t.dim(0);
  const auto d = t.data();
  return {d.begin() + n * stride, d.begin() + (n + 1) * stride};
}

oracle::Perm perm_of(const HeadEncoding& h) {
  return {h.spec().indices().begin(), h.spec().indices().end()};
}

struct Instance {
  Tensor qf, kf, v;
};

Instance features(std::size_t H, std::size_t L, std::size_t d, std::uint64_t seed) {
  const FeatureMap fm(FeatureMapConfig::for_head_dim(d), seed + 7);
  return {fm(Tensor::randn({H, L, d}, seed)), fm(Tensor::randn({H, L, d}, seed + 1)),
          Tensor::randn({H, L, d}, seed + 2)};
}

// Gradient of sum(f(a, b, c) * w) with respect to argument `which`, analytic vs numeric.
double grad_error(const std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)>& f,
                  const Instance& in, int which) {
  const Tensor w = Tensor::randn(f(in.qf, in.kf, in.v).shape(), 77);
  Tensor args[3] = {in.qf.detach(), in.kf.detach(), in.v.detach()};
  args[which].set_requires_grad(true);
  ops::sum(ops::mul(f(args[0], args[1], args[2]), w)).backward();
  auto scalar = [&](const Vec& x) {
    Tensor a[3] = {in.qf, in.kf, in.v};
    a[which] = Tensor::from(a[which].shape(), x);
    return ops::sum(ops::mul(f(a[0], a[1], a[2]), w)).item();
  };
  const Vec numeric = oracle::numeric_gradient(scalar, values(args[which]));
  const Vec analytic(args[which].grad().begin(), args[which].grad().end());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    num += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    den = std::max(den, std::max(std::abs(analytic[i]), std::abs(numeric[i])));
  }
  return std::sqrt(num) / std::max(den, 1e-12);
}

}  // namespace

TEST(ProjectQkv, IdentityWeightsSingleHead) {
  const Tensor x = Tensor::randn({5, 4}, 1);
  const auto qkv = project_qkv(x, ProjectionWeights::identity(4), 1);
  EXPECT_EQ(qkv.q.shape(), (Shape{1, 5, 4}));
  EXPECT_EQ(values(qkv.q), values(x));
  EXPECT_EQ(values(qkv.v), values(x));
  const auto zero = project_qkv(Tensor::zeros({5, 4}), ProjectionWeights::random(4, 2), 2);
  for (double v : zero.k.data()) EXPECT_EQ(v, 0.0);
}

TEST(ProjectQkv, MatchesPerTokenProducts) {
  const std::size_t L = 4, D = 8, H = 2, dh = 4;
  const Tensor x = Tensor::randn({L, D}, 3);
  const auto w = ProjectionWeights::random(D, 4);
  const auto qkv = project_qkv(x, w, H);
  const Vec xv = values(x), wq = values(w.w_q);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t o = 0; o < D; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < D; ++i) s += wq[o * D + i] * xv[t * D + i];
      EXPECT_NEAR(qkv.q.at({o / dh, t, o % dh}), s, 1e-13);
    }
  }
  EXPECT_THROW(project_qkv(Tensor::randn({L, 6}, 1), w, H), DimensionError);
  EXPECT_THROW(project_qkv(x, w, 3), DimensionError);
}

TEST(MergeHeads, InvertsSplit) {
  const Tensor x = Tensor::randn({3, 6}, 1);
  const auto qkv = project_qkv(x, ProjectionWeights::identity(6), 2);
  EXPECT_EQ(values(merge_heads(qkv.q, 2)), values(x));
}

TEST(Softmax, SingleTokenAndUniform) {
  const Tensor v = Tensor::randn({1, 1, 3}, 1);
  const auto one = softmax_attention(Tensor::randn({1, 1, 3}, 2), Tensor::randn({1, 1, 3}, 3), v, false);
  EXPECT_EQ(values(one.out), values(v));
  EXPECT_EQ(one.alpha.at({0, 0, 0}), 1.0);

  const Tensor vv = Tensor::randn({1, 4, 2}, 4);
  const auto uni = softmax_attention(Tensor::zeros({1, 4, 2}), Tensor::randn({1, 4, 2}, 5), vv, false);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 4; ++j) mean += vv.at({0, j, c}) / 4.0;
      EXPECT_NEAR(uni.out.at({0, i, c}), mean, 1e-15);
    }
  }
}

TEST(Softmax, MatchesOracleWithAndWithoutMask) {
  const std::size_t H = 2, L = 8, d = 4;
  const Tensor q = Tensor::randn({H, L, d}, 1), k = Tensor::randn({H, L, d}, 2),
               v = Tensor::randn({H, L, d}, 3);
  for (bool causal : {false, true}) {
    const auto res = softmax_attention(q, k, v, causal);
    for (std::size_t h = 0; h < H; ++h) {
      Vec alpha;
      const Vec ref = oracle::softmax_attention(slice(q, h), slice(k, h), slice(v, h), L, d, causal, &alpha);
      EXPECT_LT(oracle::max_abs_diff(slice(res.out, h), ref), 1e-13);
      EXPECT_LT(oracle::max_abs_diff(slice(res.alpha, h), alpha), 1e-14);
    }
    for (std::size_t i = 0; i < L; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        s += res.alpha.at({0, i, j});
        if (causal && j > i) EXPECT_EQ(res.alpha.at({0, i, j}), 0.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  EXPECT_FALSE(softmax_attention(q, k, v, false, false).alpha.defined());
}

TEST(Softmax, Gradients) {
  const Instance in{Tensor::randn({2, 5, 3}, 1), Tensor::randn({2, 5, 3}, 2), Tensor::randn({2, 5, 3}, 3)};
  for (bool causal : {false, true}) {
    auto f = [&](const Tensor& q, const Tensor& k, const Tensor& v) {
      return softmax_attention(q, k, v, causal, false).out;
    };
    for (int which = 0; which < 3; ++which) EXPECT_LT(grad_error(f, in, which), 1e-6);
  }
}

TEST(KernelQuadratic, MatchesOracle) {
  const auto in = features(2, 10, 4, 1);
  for (bool causal : {false, true}) {
    const auto res = kernel_attention_quadratic(in.qf, in.kf, in.v, causal);
    for (std::size_t h = 0; h < 2; ++h) {
      Vec alpha;
      const Vec ref = oracle::kernel_attention(slice(in.qf, h), slice(in.kf, h), slice(in.v, h), 10,
                                               16, 4, causal, &alpha);
      EXPECT_LT(oracle::max_abs_diff(slice(res.out, h), ref), 1e-13);
      EXPECT_LT(oracle::max_abs_diff(slice(res.alpha, h), alpha), 1e-14);
    }
  }
}

TEST(KernelQuadratic, TrivialCases) {
  const auto in = features(1, 1, 2, 3);
  EXPECT_LT(oracle::max_abs_diff(values(kernel_attention_quadratic(in.qf, in.kf, in.v, false).out),
                                 values(in.v)),
            1e-15);
  // Identical keys give uniform weights over allowed positions.
  const Tensor kf = Tensor::full({1, 4, 12}, 0.5);
  const auto res = kernel_attention_quadratic(features(1, 4, 3, 4).qf.detach(), kf,
                                              Tensor::randn({1, 4, 3}, 5), true);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j <= i; ++j) EXPECT_NEAR(res.alpha.at({0, i, j}), 1.0 / (i + 1), 1e-15);
  }
}

TEST(KernelQuadratic, DenominatorGuard) {
  const Tensor zero = Tensor::zeros({1, 2, 3});
  EXPECT_THROW(kernel_attention_quadratic(zero, zero, Tensor::randn({1, 2, 2}, 1), false),
               NumericGuardError);
  EXPECT_THROW(kernel_attention_linear(zero, zero, Tensor::randn({1, 2, 2}, 1)), NumericGuardError);
}

TEST(KernelLinear, EqualsQuadratic) {
  const auto in = features(2, 32, 4, 9);
  EXPECT_LT(oracle::max_abs_diff(values(kernel_attention_linear(in.qf, in.kf, in.v)),
                                 values(kernel_attention_quadratic(in.qf, in.kf, in.v, false).out)),
            1e-9);
  const auto one = features(1, 1, 4, 2);
  EXPECT_LT(oracle::max_abs_diff(values(kernel_attention_linear(one.qf, one.kf, one.v)), values(one.v)),
            1e-15);
}

TEST(KernelLinear, Gradients) {
  const auto in = features(2, 6, 3, 4);
  auto f = [](const Tensor& q, const Tensor& k, const Tensor& v) {
    return kernel_attention_linear(q, k, v);
  };
  for (int which = 0; which < 3; ++which) EXPECT_LT(grad_error(f, in, which), 1e-6);
}

TEST(CausalLinear, FirstPositionIsFirstValue) {
  const auto in = features(3, 5, 2, 1);
  const auto heads = assign_head_params(3, 8, 0.5, 0.9, 3, true);
  const Tensor out = causal_linear_attention(in.qf, in.kf, in.v, heads);
  for (std::size_t h = 0; h < 3; ++h) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out.at({h, 0, c}), in.v.at({h, 0, c}), 1e-15);
  }
}

TEST(CausalLinear, IdentityHeadsAreCausalPerformer) {
  const auto in = features(2, 16, 4, 2);
  const auto heads = identity_heads(2, 16, true);
  EXPECT_LT(oracle::max_abs_diff(values(causal_linear_attention(in.qf, in.kf, in.v, heads)),
                                 values(kernel_attention_quadratic(in.qf, in.kf, in.v, true).out)),
            1e-12);
}

TEST(CausalLinear, MatchesExplicitDecayOracle) {
  const std::size_t H = 2, L = 64, d = 4, m = 16;
  const auto in = features(H, L, d, 5);
  const auto heads = assign_head_params(H, m, 0.88, 0.99, 6, true);
  for (std::size_t offset : {0u, 3u}) {
    const Tensor out = causal_linear_attention(in.qf, in.kf, in.v, heads, offset);
    for (std::size_t h = 0; h < H; ++h) {
      const Vec ref = oracle::permuted_attention(slice(in.qf, h), slice(in.kf, h), slice(in.v, h), L,
                                                 m, d, perm_of(heads[h]), heads[h].r(), true, offset);
      EXPECT_LT(oracle::max_abs_diff(slice(out, h), ref), 1e-8);
    }
  }
}

TEST(CausalLinear, ConstantStatePerHead) {
  const auto heads = assign_head_params(2, 16, 0.9, 0.95, 1, true);
  for (std::size_t L : {4u, 64u, 512u}) {
    const auto in = features(2, L, 4, L);
    ScanStats st;
    causal_linear_attention(in.qf, in.kf, in.v, heads, 0, &st);
    EXPECT_EQ(st.state_floats_per_head, 16u * 5u);
    EXPECT_EQ(st.state_allocations, 1u);
    EXPECT_EQ(st.steps, 2 * L);
  }
}

TEST(CausalLinear, Gradients) {
  const auto in = features(2, 7, 3, 8);
  const auto heads = assign_head_params(2, 12, 0.8, 0.95, 9, true);
  auto f = [&](const Tensor& q, const Tensor& k, const Tensor& v) {
    return causal_linear_attention(q, k, v, heads, 2);
  };
  for (int which = 0; which < 3; ++which) EXPECT_LT(grad_error(f, in, which), 1e-6);
}

TEST(CausalLinear, LongSequencesStayFinite) {
  // r^-j would overflow here; the recurrence never forms it.
  const std::size_t L = 6000;
  const auto in = features(1, L, 2, 3);
  const auto heads = assign_head_params(1, 8, 0.88, 0.88, 1, true);
  const Tensor out = causal_linear_attention(in.qf, in.kf, in.v, heads);
  for (double v : out.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Pipeline, IdentityPermuteFormerIsPerformerBitwise) {
  const std::size_t L = 12, H = 2, d = 4;
  const Tensor x = Tensor::randn({L, H * d}, 1);
  const auto w = ProjectionWeights::random(H * d, 2);
  const FeatureMap fm(FeatureMapConfig::for_head_dim(d), 3);
  for (bool causal : {false, true}) {
    auto cfg = AttentionConfig::make(L, H, d, causal, 1.0, 1.0, 4);
    cfg.head_encodings = identity_heads(H, 4 * d, causal);
    EXPECT_EQ(values(permuteformer_attention(x, w, fm, cfg)),
              values(performer_attention(x, w, fm, H, causal)));
  }
}

TEST(Pipeline, ShiftInvariance) {
  const std::size_t L = 16, H = 2, d = 4;
  const Tensor x = Tensor::randn({L, H * d}, 5);
  const auto w = ProjectionWeights::random(H * d, 6);
  const FeatureMap fm(FeatureMapConfig::for_head_dim(d), 7);
  for (bool causal : {false, true}) {
    const auto cfg = causal ? AttentionConfig::make(L, H, d, true, 0.88, 0.99, 8)
                            : AttentionConfig::make(L, H, d, false, 1.0, 1.0, 8);
    const Vec base = values(permuteformer_attention(x, w, fm, cfg));
    for (std::size_t k : {1u, 7u, 100u}) {
      EXPECT_LT(oracle::max_abs_diff(base, values(permuteformer_attention(x, w, fm, cfg, k))), 1e-9);
    }
  }
}

TEST(Pipeline, PositionMatters) {
  // Reversing the token order changes the output once pi is not the identity.
  const std::size_t L = 6, H = 1, d = 4;
  const Tensor x = Tensor::randn({L, d}, 1);
  Vec rev(L * d);
  const Vec xv = values(x);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t c = 0; c < d; ++c) rev[t * d + c] = xv[(L - 1 - t) * d + c];
  const auto w = ProjectionWeights::random(d, 2);
  const FeatureMap fm(FeatureMapConfig::for_head_dim(d), 3);
  const auto cfg = AttentionConfig::make(L, H, d, false, 1.0, 1.0, 4);
  const Vec a = values(permuteformer_attention(x, w, fm, cfg));
  const Vec b = values(permuteformer_attention(Tensor::from({L, d}, rev), w, fm, cfg));
  Vec b_back(L * d);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t c = 0; c < d; ++c) b_back[t * d + c] = b[(L - 1 - t) * d + c];
  EXPECT_GT(oracle::max_abs_diff(a, b_back), 1e-6);
  // Performer has no position signal, so it is permutation-equivariant.
  const Vec pa = values(performer_attention(x, w, fm, H, false));
  const Vec pb = values(performer_attention(Tensor::from({L, d}, rev), w, fm, H, false));
  Vec pb_back(L * d);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t c = 0; c < d; ++c) pb_back[t * d + c] = pb[(L - 1 - t) * d + c];
  EXPECT_LT(oracle::max_abs_diff(pa, pb_back), 1e-12);
}

TEST(Pipeline, BatchedInputMatchesPerSequence) {
  const std::size_t B = 2, L = 5, H = 2, d = 2;
  const Tensor x = Tensor::randn({B, L, H * d}, 1);
  const auto w = ProjectionWeights::random(H * d, 2);
  const FeatureMap fm(FeatureMapConfig::for_head_dim(d), 3);
  const auto cfg = AttentionConfig::make(L, H, d, true, 0.9, 0.95, 4);
  const Tensor out = permuteformer_attention(x, w, fm, cfg);
  EXPECT_EQ(out.shape(), (Shape{B, L, H * d}));
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor one = permuteformer_attention(Tensor::from({L, H * d}, slice(x, b)), w, fm, cfg);
    EXPECT_LT(oracle::max_abs_diff(slice(out, b), values(one)), 1e-14);
  }
}

TEST(Pipeline, ConfigValidation) {
  EXPECT_THROW(AttentionConfig::make(8, 2, 4, false, 0.9, 0.9, 0), ValidationError);
  auto cfg = AttentionConfig::make(8, 2, 4, true, 0.9, 0.95, 0);
  EXPECT_EQ(cfg.d_model, 8u);
  EXPECT_EQ(cfg.feature_dim, 16u);
  cfg.causal = false;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Pipeline, SoftmaxPipelineShape) {
  const Tensor x = Tensor::randn({6, 8}, 1);
  EXPECT_EQ(softmax_pipeline(x, ProjectionWeights::random(8, 2), 2, true).shape(), (Shape{6, 8}));
}
