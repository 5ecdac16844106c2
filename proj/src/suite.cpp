#include "permattn/suite.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "permattn/attention.hpp"
#include "permattn/ops.hpp"

namespace permattn {

namespace {

using verify::CheckResult;
using verify::Report;

double max_abs_diff(const Tensor& a, const Tensor& b) {
  auto x = a.data();
  auto y = b.data();
  if (x.size() != y.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(x[i] - y[i]);
    if (!(d <= worst)) worst = d;  // NaN sticks
  }
  return worst;
}

double row_sum_deviation(const Tensor& alpha) {
  const std::size_t cols = alpha.dim(alpha.rank() - 1);
  auto a = alpha.data();
  double worst = 0.0;
  for (std::size_t r = 0; r * cols < a.size(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += a[r * cols + c];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

CheckResult bound(std::string check, std::string instance, double dev, double tol,
                  std::string detail = {}) {
  CheckResult r;
  r.check = std::move(check);
  r.instance = std::move(instance);
  r.max_deviation = dev;
  r.tolerance = tol;
  r.passed = dev <= tol;
  r.detail = std::move(detail);
  return r;
}

struct Features {
  Tensor qf, kf, v;
};

// Positive features [H, L, m] the way phi would produce them.
Features random_features(const AttentionConfig& ac, const FeatureMap& fmap, std::uint64_t seed) {
  const Shape s{ac.heads, ac.length, ac.d_head};
  return {fmap(Tensor::randn(s, seed)), fmap(Tensor::randn(s, seed + 1)),
          Tensor::randn(s, seed + 2)};
}

constexpr std::size_t kOracleTrials = 5;

void oracle_checks(const AttentionConfig& ac, const FeatureMap& fmap, std::uint64_t seed,
                   Report& rep) {
  double plain = 0.0, encoded = 0.0;
  for (std::size_t t = 0; t < kOracleTrials; ++t) {
    const Features f = random_features(ac, fmap, seed + 10 * t);
    const Tensor qe = encode_heads(f.qf, ac.head_encodings, Side::Query);
    const Tensor ke = encode_heads(f.kf, ac.head_encodings, Side::Key);
    if (ac.causal) {
      const auto ident = identity_heads(ac.heads, ac.feature_dim, true);
      plain = std::max(plain, max_abs_diff(causal_linear_attention(f.qf, f.kf, f.v, ident),
                                           kernel_attention_quadratic(f.qf, f.kf, f.v, true).out));
      encoded = std::max(encoded,
                         max_abs_diff(causal_linear_attention(f.qf, f.kf, f.v, ac.head_encodings),
                                      kernel_attention_quadratic(qe, ke, f.v, true).out));
    } else {
      plain = std::max(plain, max_abs_diff(kernel_attention_linear(f.qf, f.kf, f.v),
                                           kernel_attention_quadratic(f.qf, f.kf, f.v, false).out));
      encoded = std::max(encoded, max_abs_diff(kernel_attention_linear(qe, ke, f.v),
                                               kernel_attention_quadratic(qe, ke, f.v, false).out));
    }
  }
  const double tol = ac.causal ? 1e-8 : 1e-9;
  const std::string path = ac.causal ? "causal recurrence" : "linear";
  rep.add(bound("oracle", path + " vs quadratic, no encoding", plain, tol));
  rep.add(bound("oracle", path + " vs quadratic, encoded", encoded, tol));
}

void shift_checks(const AttentionConfig& ac, const FeatureMap& fmap, std::uint64_t seed,
                  Report& rep) {
  const Tensor x = Tensor::randn({ac.length, ac.d_model}, seed);
  const auto w = ProjectionWeights::random(ac.d_model, seed + 1);
  const Tensor base = permuteformer_attention(x, w, fmap, ac, 0);
  for (std::size_t k : {1u, 7u, 100u}) {
    rep.add(bound("shift", "offset " + std::to_string(k),
                  max_abs_diff(base, permuteformer_attention(x, w, fmap, ac, k)), 1e-9));
  }
}

void row_sum_checks(const AttentionConfig& ac, const FeatureMap& fmap, std::uint64_t seed,
                    Report& rep) {
  const Features f = random_features(ac, fmap, seed);
  const Tensor qe = encode_heads(f.qf, ac.head_encodings, Side::Query);
  const Tensor ke = encode_heads(f.kf, ac.head_encodings, Side::Key);
  rep.add(bound("row-sums", "kernel, no encoding",
                row_sum_deviation(kernel_attention_quadratic(f.qf, f.kf, f.v, ac.causal).alpha),
                1e-9));
  rep.add(bound("row-sums", "kernel, encoded",
                row_sum_deviation(kernel_attention_quadratic(qe, ke, f.v, ac.causal).alpha), 1e-9));
  const Shape s{ac.heads, ac.length, ac.d_head};
  rep.add(bound("row-sums", "softmax",
                row_sum_deviation(softmax_attention(Tensor::randn(s, seed + 3),
                                                    Tensor::randn(s, seed + 4), f.v, ac.causal)
                                      .alpha),
                1e-9));
}

void positivity_checks(const AttentionConfig& ac, std::uint64_t seed, Report& rep) {
  const std::size_t horizon = std::min<std::size_t>(ac.length, 64);
  for (const auto& h : ac.head_encodings) {
    const auto pr = verify::check_positive(h, 200, seed + h.head_index(), ac.fmap.epsilon, horizon);
    CheckResult r;
    r.check = "positive";
    r.instance = "head " + std::to_string(h.head_index());
    r.max_deviation = static_cast<double>(pr.negative_entries);
    r.passed = pr.negative_entries == 0 && pr.min_value > 0.0;
    std::ostringstream os;
    os << "min sim " << pr.min_value;
    r.detail = os.str();
    rep.add(r);
  }
  const auto neg = verify::check_positive_signed(ac.feature_dim, 200, seed);
  CheckResult r;
  r.check = "positive";
  r.instance = "signed permutation control";
  r.negative_control = true;
  r.max_deviation = static_cast<double>(neg.negative_entries);
  r.passed = neg.negative_entries > 0;
  r.detail = std::to_string(neg.negative_entries) + " negative similarities";
  rep.add(r);
}

void relative_checks(const AttentionConfig& ac, std::uint64_t seed, Report& rep) {
  constexpr long kHorizon = 256;
  for (const auto& h : ac.head_encodings) {
    const verify::PermutationPair pair(h.spec(), h.r());
    rep.add(verify::check_relative(pair, 100, kHorizon, seed + h.head_index(),
                                   "permutation head " + std::to_string(h.head_index())));
  }
  const std::size_t dim = std::min<std::size_t>(ac.feature_dim, 16);
  const auto ortho = verify::TransformPair::random_orthogonal(dim, seed, -32, 32);
  rep.add(verify::check_relative(ortho, 100, seed + 1, "random orthogonal, dim " +
                                                           std::to_string(dim)));
  const auto other = verify::TransformPair::random_orthogonal(dim, seed + 2, -32, 32);
  rep.add(verify::check_relative_mismatched(ortho, other, 20, seed + 3, "mismatched P"));
}

void bounded_checks(const AttentionConfig& ac, Report& rep) {
  constexpr long kHorizon = 256;
  for (const auto& h : ac.head_encodings) {
    const verify::PermutationPair pair(h.spec(), h.r());
    const auto br = verify::check_bounded(pair, kHorizon, ac.causal);
    double dev = 0.0;
    for (std::size_t k = 0; k < br.lags.size(); ++k) {
      const double expected = std::pow(h.r(), static_cast<double>(br.lags[k]));
      dev = std::max(dev, std::abs(br.norms[k] - expected));
    }
    CheckResult r;
    r.check = "bounded";
    r.instance = "head " + std::to_string(h.head_index()) + " r=" + std::to_string(h.r());
    r.max_deviation = dev;
    r.passed = dev == 0.0 && br.max_norm <= 1.0 && br.non_increasing;
    std::ostringstream os;
    os << "max norm " << br.max_norm << " over " << br.lags.size() << " lags";
    r.detail = os.str();
    rep.add(r);
  }
}

void two_d_checks(const AttentionConfig& ac, const FeatureMap& fmap, std::uint64_t seed,
                  Report& rep) {
  std::vector<TwoDEncoding> encs;
  bool commute = true;
  for (std::size_t h = 0; h < ac.heads; ++h) {
    encs.push_back(TwoDEncoding::disjoint(ac.feature_dim, seed + h));
    commute = commute && permutations_commute(encs.back().pi_x(), encs.back().pi_y());
  }
  CheckResult c;
  c.check = "2d";
  c.instance = "pi_x, pi_y commute";
  c.passed = commute;
  rep.add(c);

  const Grid grid{12, 12};
  std::vector<Position2D> pos;
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) pos.push_back({x, y});
  }
  const Tensor x = Tensor::randn({pos.size(), ac.d_model}, seed);
  const auto w = ProjectionWeights::random(ac.d_model, seed + 1);
  const Tensor base = permuteformer_attention_2d(x, w, fmap, ac.heads, encs, pos, grid);
  for (auto [dx, dy] : {std::pair<std::size_t, std::size_t>{1, 0}, {0, 1}, {3, 5}}) {
    std::vector<Position2D> moved;
    for (const auto& p : pos) moved.push_back({p.x + dx, p.y + dy});
    rep.add(bound("2d", "translate (" + std::to_string(dx) + "," + std::to_string(dy) + ")",
                  max_abs_diff(base, permuteformer_attention_2d(x, w, fmap, ac.heads, encs, moved,
                                                                grid)),
                  1e-9));
  }
}

void memory_check(const AttentionConfig& ac, const FeatureMap& fmap, std::uint64_t seed,
                  Report& rep) {
  if (!ac.causal) return;
  ScanStats small, large;
  for (auto [len, st] : {std::pair<std::size_t, ScanStats*>{8, &small}, {4 * ac.length, &large}}) {
    AttentionConfig sized = ac;
    sized.length = len;
    const Features f = random_features(sized, fmap, seed);
    causal_linear_attention(f.qf, f.kf, f.v, ac.head_encodings, 0, st);
  }
  const std::size_t expected = ac.feature_dim * (ac.d_head + 1);
  CheckResult r;
  r.check = "state";
  r.instance = "recurrent state per head";
  r.passed = small.state_floats_per_head == expected && large.state_floats_per_head == expected;
  r.detail = std::to_string(large.state_floats_per_head) + " floats, expected " +
             std::to_string(expected);
  rep.add(r);
}

void gradient_check(const AttentionConfig& ac, const FeatureMap& fmap, std::uint64_t seed,
                    Report& rep) {
  AttentionConfig small = ac;
  small.length = std::min<std::size_t>(ac.length, 8);
  const Tensor x = Tensor::randn({small.length, ac.d_model}, seed);
  const Tensor c = Tensor::randn({small.length, ac.d_model}, seed + 1);
  const auto w = ProjectionWeights::random(ac.d_model, seed + 2, true);
  auto loss = [&] { return ops::sum(ops::mul(permuteformer_attention(x, w, fmap, small), c)); };
  rep.add(bound("gradient", "dL/dW_q", verify::gradient_relative_error(loss, w.w_q), 1e-4));
  rep.add(bound("gradient", "dL/dW_v", verify::gradient_relative_error(loss, w.w_v), 1e-4));
}

}  // namespace

verify::Report run_suite(const SuiteConfig& cfg) {
  const AttentionConfig ac = to_attention_config(cfg);
  const FeatureMap fmap(ac.fmap, cfg.seed + 17);
  const std::uint64_t s = cfg.seed;
  Report rep;
  oracle_checks(ac, fmap, s + 100, rep);
  shift_checks(ac, fmap, s + 200, rep);
  row_sum_checks(ac, fmap, s + 300, rep);
  positivity_checks(ac, s + 400, rep);
  relative_checks(ac, s + 500, rep);
  bounded_checks(ac, rep);
  two_d_checks(ac, fmap, s + 600, rep);
  memory_check(ac, fmap, s + 700, rep);
  gradient_check(ac, fmap, s + 800, rep);
  return rep;
}

}  // namespace permattn
