#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "permattn/permutation.hpp"
#include "permattn/position_encoding.hpp"
#include "permattn/tensor.hpp"

// Numeric checks of the relative / bounded / positive properties of a
// position-dependent feature transform M_i, N_j, evaluated on the
// constructive form M_i = P^{-i T} R, N_j = P^j Q.
namespace permattn::verify {

using Matrix = Eigen::MatrixXd;

inline constexpr double kRelativeTolerance = 1e-9;
inline constexpr double kMaxCondition = 1e12;

struct CheckResult {
  std::string check;
  std::string instance;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  // Negative controls pass when the property is violated (deviation above
  // tolerance); a verifier that cannot fail is not evidence of anything.
  bool negative_control = false;
  bool passed = false;
  std::string detail;
};

class Report {
 public:
  void add(CheckResult r) { results_.push_back(std::move(r)); }
  void append(const Report& other);
  const std::vector<CheckResult>& results() const { return results_; }
  bool all_passed() const;
  std::size_t failures() const;

  void write_table(std::ostream& os) const;
  // check,instance,max_deviation,passed
  void write_csv(std::ostream& os) const;

 private:
  std::vector<CheckResult> results_;
};

// Dense (P, R, Q) with cached powers P^e for |e| <= horizon.
class TransformPair {
 public:
  TransformPair(Matrix p, Matrix r, Matrix q, long i_min, long i_max);

  static TransformPair random_orthogonal(std::size_t dim, std::uint64_t seed, long i_min,
                                         long i_max);
  // R = Q = I, P = r^-1 P_pi.
  static TransformPair from_permutation(const PermutationSpec& pi, double r, long i_min,
                                        long i_max);

  const Matrix& p() const { return p_; }
  const Matrix& r() const { return r_; }
  const Matrix& q() const { return q_; }
  long i_min() const { return i_min_; }
  long i_max() const { return i_max_; }
  double condition_number() const { return cond_; }

  // P^e by repeated multiplication (P^-1 for negative e), cached.
  const Matrix& power(long e) const;

  Matrix m_at(long i) const;  // P^{-i T} R
  Matrix n_at(long j) const;  // P^j Q

 private:
  Matrix p_, r_, q_, p_inv_;
  long i_min_, i_max_;
  double cond_;
  mutable std::vector<Matrix> pos_;  // P^0, P^1, ...
  mutable std::vector<Matrix> neg_;  // P^0, P^-1, ...
};

// M_i^T N_j as R^T P^(j-i) Q, composing the exponent first.
Matrix build_mn(const TransformPair& pair, long i, long j);

// M_i^T N_j with the two factors built separately, M from m_side and N from
// n_side (the same pair for a genuine instance).
Matrix factored_mn(const TransformPair& m_side, const TransformPair& n_side, long i, long j);

// r^e * P_idx, the form every PermuteFormer factor takes. Products stay in
// this form, so comparisons are exact index/exponent arithmetic.
struct ScaledPermutation {
  std::vector<Index> idx;  // (P v)[x] = v[idx[x]]
  long exponent = 0;
  double r = 1.0;

  double scale() const;
  Matrix dense() const;
};

// Index-exact PermuteFormer instantiation.
class PermutationPair {
 public:
  PermutationPair(PermutationSpec pi, double r);

  const PermutationSpec& spec() const { return pi_; }
  double r() const { return r_; }

  ScaledPermutation m_at(long i) const;  // r^i P_pi^i
  ScaledPermutation n_at(long j) const;  // r^-j P_pi^j
  // M_i^T N_j from the separate factors.
  ScaledPermutation mn(long i, long j) const;

 private:
  std::vector<Index> power_indices(long e) const;

  PermutationSpec pi_;
  PermutationSpec inv_;
  double r_;
};

double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(const ScaledPermutation& a, const ScaledPermutation& b);

// Spectral norm. Monomial matrices (one nonzero per row and column) take the
// exact max-|entry| value; everything else goes through an SVD.
double operator_norm(const Matrix& m);

// Samples (i, j, k) and compares M_i^T N_j with M_{i+k}^T N_{j+k}.
CheckResult check_relative(const TransformPair& pair, std::size_t trials, std::uint64_t seed,
                           const std::string& instance);
CheckResult check_relative(const PermutationPair& pair, std::size_t trials, long horizon,
                           std::uint64_t seed, const std::string& instance);
// Negative control: M from one pair, N from another. Passes only if every
// trial deviates by more than the tolerance; max_deviation is the smallest.
CheckResult check_relative_mismatched(const TransformPair& m_side, const TransformPair& n_side,
                                      std::size_t trials, std::uint64_t seed,
                                      const std::string& instance);

struct BoundedReport {
  std::vector<long> lags;       // i - j
  std::vector<double> norms;    // ||M_i^T N_j|| at each lag
  double max_norm = 0.0;
  bool non_increasing = true;   // norms non-increasing in |lag| on the scanned cone
  bool stable_in_horizon = true;  // max over the cone unchanged between horizon/2 and horizon
};

// Scans lags 0..horizon (causal, i >= j) or -horizon..horizon.
BoundedReport check_bounded(const PermutationPair& pair, long horizon, bool causal);
BoundedReport check_bounded(const TransformPair& pair, long horizon, bool causal);

struct PositiveReport {
  std::size_t trials = 0;
  std::size_t negative_entries = 0;
  double min_value = 0.0;
  double min_expected = 0.0;  // epsilon * min r^p over scanned positions
};

// Positive vectors with entries >= epsilon, encoded on both sides at random
// positions below max_position.
PositiveReport check_positive(const HeadEncoding& enc, std::size_t trials, std::uint64_t seed,
                              double epsilon = 1e-3, std::size_t max_position = 64);
// Negative control: a signed permutation in place of P_pi.
PositiveReport check_positive_signed(std::size_t m, std::size_t trials, std::uint64_t seed);

// max || analytic - central difference || / max(||analytic||, ||numeric||).
double gradient_relative_error(const std::function<Tensor()>& loss, const Tensor& param,
                               double step = 1e-5);

}  // namespace permattn::verify
