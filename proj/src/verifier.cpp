#include "permattn/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "permattn/errors.hpp"
#include "permattn/ops.hpp"

namespace permattn::verify {

void Report::append(const Report& other) {
  results_.insert(results_.end(), other.results_.begin(), other.results_.end());
}

bool Report::all_passed() const { return failures() == 0; }

std::size_t Report::failures() const {
  return static_cast<std::size_t>(
      std::count_if(results_.begin(), results_.end(), [](const auto& r) { return !r.passed; }));
}

void Report::write_table(std::ostream& os) const {
  std::size_t wc = 5, wi = 8;
  for (const auto& r : results_) {
    wc = std::max(wc, r.check.size());
    wi = std::max(wi, r.instance.size());
  }
  os << std::left << std::setw(static_cast<int>(wc)) << "check" << "  "
     << std::setw(static_cast<int>(wi)) << "instance" << "  " << std::setw(13) << "max_dev"
     << "  " << std::setw(9) << "tol" << "  result\n";
  os << std::string(wc + wi + 40, '-') << '\n';
  for (const auto& r : results_) {
    std::ostringstream dev, tol;
    dev << std::scientific << std::setprecision(3) << r.max_deviation;
    tol << std::scientific << std::setprecision(1) << r.tolerance;
    os << std::left << std::setw(static_cast<int>(wc)) << r.check << "  "
       << std::setw(static_cast<int>(wi)) << r.instance << "  " << std::setw(13) << dev.str()
       << "  " << std::setw(9) << tol.str() << "  " << (r.passed ? "PASS" : "FAIL")
       << (r.negative_control ? " (negative control)" : "");
    if (!r.detail.empty()) os << "  " << r.detail;
    os << '\n';
  }
  os << std::right;
}

void Report::write_csv(std::ostream& os) const {
  os << "check,instance,max_deviation,passed\n";
  for (const auto& r : results_) {
    std::ostringstream dev;
    dev << std::setprecision(17) << r.max_deviation;
    os << r.check << ',' << r.instance << ',' << dev.str() << ',' << (r.passed ? "true" : "false")
       << '\n';
  }
}

TransformPair::TransformPair(Matrix p, Matrix r, Matrix q, long i_min, long i_max)
    : p_(std::move(p)), r_(std::move(r)), q_(std::move(q)), i_min_(i_min), i_max_(i_max) {
  if (p_.rows() == 0 || p_.rows() != p_.cols()) throw DimensionError("TransformPair: P must be square");
  if (r_.rows() != p_.rows() || q_.rows() != p_.rows()) {
    throw DimensionError("TransformPair: R and Q need as many rows as P");
  }
  if (i_min_ > i_max_) throw UsageError("TransformPair: empty position range");
  Eigen::JacobiSVD<Matrix> svd(p_);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  cond_ = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  if (!(cond_ < kMaxCondition)) {
    throw ValidationError("TransformPair: P is singular or ill-conditioned (cond = " +
                          std::to_string(cond_) + ")");
  }
  p_inv_ = p_.partialPivLu().inverse();
  pos_.push_back(Matrix::Identity(p_.rows(), p_.cols()));
  neg_.push_back(Matrix::Identity(p_.rows(), p_.cols()));
}

TransformPair TransformPair::random_orthogonal(std::size_t dim, std::uint64_t seed, long i_min,
                                               long i_max) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist;
  Matrix g(dim, dim);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = dist(gen);
  }
  Matrix p = Eigen::HouseholderQR<Matrix>(g).householderQ();
  const auto n = static_cast<Eigen::Index>(dim);
  return TransformPair(std::move(p), Matrix::Identity(n, n), Matrix::Identity(n, n), i_min, i_max);
}

TransformPair TransformPair::from_permutation(const PermutationSpec& pi, double r, long i_min,
                                              long i_max) {
  if (!(r > 0.0)) throw UsageError("from_permutation: r must be positive");
  const auto n = static_cast<Eigen::Index>(pi.size());
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) p(i, pi[static_cast<std::size_t>(i)]) = 1.0 / r;
  return TransformPair(std::move(p), Matrix::Identity(n, n), Matrix::Identity(n, n), i_min, i_max);
}

const Matrix& TransformPair::power(long e) const {
  auto& table = e >= 0 ? pos_ : neg_;
  const Matrix& base = e >= 0 ? p_ : p_inv_;
  const auto want = static_cast<std::size_t>(e >= 0 ? e : -e);
  while (table.size() <= want) table.push_back(table.back() * base);
  return table[want];
}

Matrix TransformPair::m_at(long i) const { return power(-i).transpose() * r_; }

Matrix TransformPair::n_at(long j) const { return power(j) * q_; }

Matrix build_mn(const TransformPair& pair, long i, long j) {
  return pair.r().transpose() * pair.power(j - i) * pair.q();
}

Matrix factored_mn(const TransformPair& m_side, const TransformPair& n_side, long i, long j) {
  return m_side.m_at(i).transpose() * n_side.n_at(j);
}

double ScaledPermutation::scale() const { return std::pow(r, static_cast<double>(exponent)); }

Matrix ScaledPermutation::dense() const {
  const auto n = static_cast<Eigen::Index>(idx.size());
  Matrix out = Matrix::Zero(n, n);
  const double s = scale();
  for (Eigen::Index x = 0; x < n; ++x) out(x, idx[static_cast<std::size_t>(x)]) = s;
  return out;
}

PermutationPair::PermutationPair(PermutationSpec pi, double r)
    : pi_(std::move(pi)), inv_(pi_.inverse()), r_(r) {
  if (!(r > 0.0 && r <= 1.0)) throw UsageError("PermutationPair: r must lie in (0, 1]");
}

std::vector<Index> PermutationPair::power_indices(long e) const {
  auto row = e >= 0 ? pi_.power(static_cast<std::size_t>(e)) : inv_.power(static_cast<std::size_t>(-e));
  return {row.begin(), row.end()};
}

ScaledPermutation PermutationPair::m_at(long i) const {
  // P^{-i T} with P = r^-1 P_pi: r^i (P_pi^-i)^T = r^i P_pi^i
  return {power_indices(i), i, r_};
}

ScaledPermutation PermutationPair::n_at(long j) const { return {power_indices(j), -j, r_}; }

ScaledPermutation PermutationPair::mn(long i, long j) const {
  const ScaledPermutation m = m_at(i);
  const ScaledPermutation n = n_at(j);
  // (P_a)^T = P_{a^-1}; P_A P_B has index array B[A[x]].
  std::vector<Index> a_inv(m.idx.size());
  for (std::size_t x = 0; x < m.idx.size(); ++x) a_inv[m.idx[x]] = static_cast<Index>(x);
  std::vector<Index> out(a_inv.size());
  for (std::size_t x = 0; x < out.size(); ++x) out[x] = n.idx[a_inv[x]];
  return {std::move(out), m.exponent + n.exponent, r_};
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("max_abs_diff: shape mismatch");
  return (a - b).cwiseAbs().maxCoeff();
}

double max_abs_diff(const ScaledPermutation& a, const ScaledPermutation& b) {
  if (a.idx.size() != b.idx.size()) throw DimensionError("max_abs_diff: size mismatch");
  const double sa = a.scale(), sb = b.scale();
  double worst = 0.0;
  for (std::size_t x = 0; x < a.idx.size(); ++x) {
    const double d = a.idx[x] == b.idx[x] ? std::abs(sa - sb) : std::max(std::abs(sa), std::abs(sb));
    worst = std::max(worst, d);
  }
  return worst;
}

double operator_norm(const Matrix& m) {
  bool monomial = true;
  std::vector<int> col_count(static_cast<std::size_t>(m.cols()), 0);
  double max_entry = 0.0;
  for (Eigen::Index i = 0; i < m.rows() && monomial; ++i) {
    int row_count = 0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) != 0.0) {
        ++row_count;
        ++col_count[static_cast<std::size_t>(j)];
        max_entry = std::max(max_entry, std::abs(m(i, j)));
      }
    }
    monomial = row_count <= 1;
  }
  for (int c : col_count) monomial = monomial && c <= 1;
  if (monomial) return max_entry;
  return Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
}

namespace {

struct Triple {
  long i, j, k;
};

Triple sample_triple(std::mt19937_64& gen, long lo, long hi) {
  const long span = hi - lo;
  std::uniform_int_distribution<long> shift(1, std::max(1L, span / 2));
  const long k = shift(gen);
  std::uniform_int_distribution<long> pos(lo, std::max(lo, hi - k));
  return {pos(gen), pos(gen), k};
}

}  // namespace

CheckResult check_relative(const TransformPair& pair, std::size_t trials, std::uint64_t seed,
                           const std::string& instance) {
  if (trials == 0) throw UsageError("check_relative: trials must be >= 1");
  std::mt19937_64 gen(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Triple tr = sample_triple(gen, pair.i_min(), pair.i_max());
    const Matrix a = factored_mn(pair, pair, tr.i, tr.j);
    const Matrix b = factored_mn(pair, pair, tr.i + tr.k, tr.j + tr.k);
    worst = std::max(worst, max_abs_diff(a, b));
  }
  return {"relative", instance, worst, kRelativeTolerance, false, worst < kRelativeTolerance, ""};
}

CheckResult check_relative(const PermutationPair& pair, std::size_t trials, long horizon,
                           std::uint64_t seed, const std::string& instance) {
  if (trials == 0) throw UsageError("check_relative: trials must be >= 1");
  std::mt19937_64 gen(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Triple tr = sample_triple(gen, 0, horizon);
    worst = std::max(worst, max_abs_diff(pair.mn(tr.i, tr.j), pair.mn(tr.i + tr.k, tr.j + tr.k)));
  }
  return {"relative", instance, worst, 0.0, false, worst == 0.0, "index-exact"};
}

CheckResult check_relative_mismatched(const TransformPair& m_side, const TransformPair& n_side,
                                      std::size_t trials, std::uint64_t seed,
                                      const std::string& instance) {
  if (trials == 0) throw UsageError("check_relative: trials must be >= 1");
  std::mt19937_64 gen(seed);
  double weakest = std::numeric_limits<double>::infinity();
  std::size_t flagged = 0;
  const long lo = std::max(m_side.i_min(), n_side.i_min());
  const long hi = std::min(m_side.i_max(), n_side.i_max());
  for (std::size_t t = 0; t < trials; ++t) {
    const Triple tr = sample_triple(gen, lo, hi);
    const Matrix a = factored_mn(m_side, n_side, tr.i, tr.j);
    const Matrix b = factored_mn(m_side, n_side, tr.i + tr.k, tr.j + tr.k);
    const double dev = max_abs_diff(a, b);
    weakest = std::min(weakest, dev);
    flagged += dev > kRelativeTolerance;
  }
  // Every trial must expose the violation; max_deviation is the smallest one seen.
  return {"relative-mismatched", instance, weakest, kRelativeTolerance, true, flagged == trials,
          "flagged " + std::to_string(flagged) + "/" + std::to_string(trials) + " trials"};
}

namespace {

BoundedReport summarize(std::vector<long> lags, std::vector<double> norms, long horizon) {
  BoundedReport rep;
  rep.lags = std::move(lags);
  rep.norms = std::move(norms);
  double half_max = 0.0;
  for (std::size_t t = 0; t < rep.lags.size(); ++t) {
    rep.max_norm = std::max(rep.max_norm, rep.norms[t]);
    if (std::abs(rep.lags[t]) <= horizon / 2) half_max = std::max(half_max, rep.norms[t]);
  }
  rep.stable_in_horizon = half_max == rep.max_norm;
  // lags are sorted ascending; compare each entry with its neighbour toward 0
  for (std::size_t t = 0; t < rep.lags.size(); ++t) {
    const long lag = rep.lags[t];
    if (lag > 0 && t > 0 && rep.norms[t] > rep.norms[t - 1]) rep.non_increasing = false;
    if (lag < 0 && t + 1 < rep.lags.size() && rep.norms[t] > rep.norms[t + 1]) {
      rep.non_increasing = false;
    }
  }
  return rep;
}

}  // namespace

BoundedReport check_bounded(const PermutationPair& pair, long horizon, bool causal) {
  if (horizon < 1) throw UsageError("check_bounded: horizon must be >= 1");
  std::vector<long> lags;
  std::vector<double> norms;
  for (long lag = causal ? 0 : -horizon; lag <= horizon; ++lag) {
    const long j = horizon;
    const long i = j + lag;
    lags.push_back(lag);
    norms.push_back(operator_norm(pair.mn(i, j).dense()));
  }
  return summarize(std::move(lags), std::move(norms), horizon);
}

BoundedReport check_bounded(const TransformPair& pair, long horizon, bool causal) {
  if (horizon < 1) throw UsageError("check_bounded: horizon must be >= 1");
  std::vector<long> lags;
  std::vector<double> norms;
  for (long lag = causal ? 0 : -horizon; lag <= horizon; ++lag) {
    lags.push_back(lag);
    norms.push_back(operator_norm(build_mn(pair, lag, 0)));
  }
  return summarize(std::move(lags), std::move(norms), horizon);
}

PositiveReport check_positive(const HeadEncoding& enc, std::size_t trials, std::uint64_t seed,
                              double epsilon, std::size_t max_position) {
  if (trials == 0) throw UsageError("check_positive: trials must be >= 1");
  const std::size_t m = enc.spec().size();
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist;
  std::uniform_int_distribution<std::size_t> pos(0, max_position - 1);
  PositiveReport rep;
  rep.trials = trials;
  rep.min_value = std::numeric_limits<double>::infinity();
  rep.min_expected = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> x(m);
    for (auto& v : x) v = std::max(dist(gen), 0.0) + epsilon;
    const Tensor features = Tensor::from({1, m}, std::move(x));
    const std::size_t p = pos(gen);
    rep.min_expected = std::min(rep.min_expected, epsilon * std::pow(enc.r(), static_cast<double>(p)));
    for (Side side : {Side::Query, Side::Key}) {
      const Tensor out = encode(features, enc, side, p, true);
      for (double v : out.data()) {
        if (!(v > 0.0)) ++rep.negative_entries;
        rep.min_value = std::min(rep.min_value, v);
      }
    }
  }
  return rep;
}

PositiveReport check_positive_signed(std::size_t m, std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw UsageError("check_positive_signed: trials must be >= 1");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist;
  std::bernoulli_distribution flip(0.5);
  const auto pi = sample_permutation(m, seed);
  std::vector<double> sign(m);
  for (auto& s : sign) s = flip(gen) ? -1.0 : 1.0;
  sign[0] = -1.0;  // at least one flipped row
  PositiveReport rep;
  rep.trials = trials;
  rep.min_value = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> x(m);
    for (auto& v : x) v = std::max(dist(gen), 0.0) + 1e-3;
    for (std::size_t i = 0; i < m; ++i) {
      const double y = sign[i] * x[pi[i]];
      if (!(y > 0.0)) ++rep.negative_entries;
      rep.min_value = std::min(rep.min_value, y);
    }
  }
  return rep;
}

double gradient_relative_error(const std::function<Tensor()>& loss, const Tensor& param,
                               double step) {
  Tensor p = param;
  p.zero_grad();
  Tensor root = loss();
  root.backward();
  const std::vector<double> analytic(p.grad().begin(), p.grad().end());

  std::vector<double> values(p.data().begin(), p.data().end());
  std::vector<double> numeric(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    p.assign(values);
    const double up = loss().item();
    values[i] = orig - step;
    p.assign(values);
    const double down = loss().item();
    values[i] = orig;
    numeric[i] = (up - down) / (2.0 * step);
  }
  p.assign(values);

  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / denom;
}

}  // namespace permattn::verify
