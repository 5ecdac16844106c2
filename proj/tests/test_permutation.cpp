#include <gtest/gtest.h>

#include <map>
#include <thread>

#include "permattn/errors.hpp"
#include "permattn/permutation.hpp"
#include "support/oracles.hpp"

using namespace permattn;

namespace {

oracle::Perm as_perm(std::span<const Index> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Permutation, RejectsNonBijections) {
  EXPECT_THROW(PermutationSpec({0, 0, 2}), ValidationError);
  EXPECT_THROW(PermutationSpec({0, 3, 1}), ValidationError);
  EXPECT_THROW(PermutationSpec(std::vector<Index>{}), UsageError);
}

TEST(Permutation, SampleBasics) {
  const auto one = sample_permutation(1, 5);
  EXPECT_TRUE(one.is_identity());
  EXPECT_EQ(one.order(), 1);
  EXPECT_EQ(sample_permutation(64, 9), sample_permutation(64, 9));
  EXPECT_THROW(sample_permutation(0, 1), UsageError);
}

TEST(Permutation, SamplingIsUniformOnThree) {
  std::map<std::vector<Index>, int> counts;
  std::mt19937_64 gen(2024);
  const int n = 60000;
  for (int s = 0; s < n; ++s) {
    const auto p = sample_permutation(3, gen);
    counts[{p.indices().begin(), p.indices().end()}]++;
  }
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [p, c] : counts) EXPECT_NEAR(static_cast<double>(c) / n, 1.0 / 6.0, 0.02 / 6.0);
}

TEST(Permutation, OrderExamples) {
  EXPECT_EQ(PermutationSpec::identity(5).order(), 1);
  EXPECT_EQ(PermutationSpec({1, 2, 0}).order(), 3);
  EXPECT_EQ(PermutationSpec({1, 0, 3, 4, 2}).order(), 6);
}

TEST(Permutation, OrderMatchesBruteForce) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto p = sample_permutation(12, s);
    EXPECT_EQ(p.order(), oracle::brute_order(as_perm(p.indices()))) << "seed " << s;
  }
}

TEST(Permutation, CyclesPartitionIndices) {
  const auto p = sample_permutation(40, 3);
  std::vector<int> seen(40, 0);
  BigInt l = 1;
  for (const auto& c : p.cycles()) {
    for (std::size_t t = 0; t < c.size(); ++t) {
      seen[c[t]]++;
      EXPECT_EQ(p[c[t]], c[(t + 1) % c.size()]);
    }
    l = lcm(l, BigInt(c.size()));
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(l, p.order());
}

TEST(Permutation, PowerOfOrderIsIdentity) {
  const auto p = sample_permutation(10, 4);
  const auto ord = static_cast<std::size_t>(p.order());
  const auto row = p.power(ord);
  for (std::size_t i = 0; i < row.size(); ++i) EXPECT_EQ(row[i], i);
}

TEST(Permutation, PowerTableMatchesRepeatedComposition) {
  const auto p = sample_permutation(16, 8);
  const auto table = build_power_table(p, 40);
  for (std::size_t i = 0; i < 40; ++i) {
    EXPECT_EQ(as_perm(table.row(i)), oracle::perm_power(as_perm(p.indices()), i));
  }
  const auto id = build_power_table(PermutationSpec::identity(4), 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(as_perm(id.row(i)), (oracle::Perm{0, 1, 2, 3}));
  const auto cyc = build_power_table(PermutationSpec({1, 2, 0}), 4);
  EXPECT_EQ(as_perm(cyc.row(3)), as_perm(cyc.row(0)));
  EXPECT_THROW(build_power_table(p, 0), UsageError);
}

TEST(Permutation, PowerDifferencesFormAGroup) {
  // pi^i composed with (pi^j)^-1 is pi^(i-j).
  const auto p = sample_permutation(12, 10);
  const auto pp = as_perm(p.indices());
  for (std::size_t i = 0; i < 15; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const auto a = oracle::perm_power(pp, i);
      const auto b = oracle::perm_power(pp, j);
      oracle::Perm b_inv(b.size());
      for (std::size_t x = 0; x < b.size(); ++x) b_inv[b[x]] = static_cast<Index>(x);
      oracle::Perm composed(a.size());
      for (std::size_t x = 0; x < a.size(); ++x) composed[x] = a[b_inv[x]];
      EXPECT_EQ(composed, as_perm(p.power(i - j)));
    }
  }
}

TEST(Permutation, InverseAndCompose) {
  const auto p = sample_permutation(20, 12);
  EXPECT_TRUE(p.compose(p.inverse()).is_identity());
  EXPECT_TRUE(p.inverse().compose(p).is_identity());
  EXPECT_EQ(as_perm(p.compose(p).indices()), as_perm(p.power(2)));
}

TEST(Permutation, CacheIsSharedAndThreadSafe) {
  const auto p = sample_permutation(32, 1);
  const PermutationSpec copy = p;
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t) {
    workers.emplace_back([&, t] {
      for (std::size_t e = 0; e < 200; ++e) (void)copy.power((e * 7 + t) % 300);
    });
  }
  for (auto& w : workers) w.join();
  EXPECT_GE(p.cached_powers(), 299u);
  for (std::size_t e : {0u, 17u, 298u}) {
    EXPECT_EQ(as_perm(p.power(e)), oracle::perm_power(as_perm(p.indices()), e));
  }
}

TEST(Permutation, PowersSpansStayValid) {
  const auto p = sample_permutation(8, 2);
  const auto rows = p.powers(5, 3);
  const auto copy = as_perm(rows[0]);
  (void)p.power(5000);  // grow the cache
  EXPECT_EQ(as_perm(rows[0]), copy);
}
