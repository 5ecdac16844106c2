#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <shared_mutex>
#include <span>
#include <vector>

namespace permattn {

using BigInt = boost::multiprecision::cpp_int;
using Index = std::uint32_t;

// Row-major index matrix; row i of a power table is pi^i.
struct IndexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Index> values;

  std::span<const Index> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

BigInt lcm(const BigInt& a, const BigInt& b);

// A fixed permutation pi of 0..m-1 together with its cycle structure, its
// order and a cache of its powers.
//
// pi[i] = pi(i); applying it to a vector is a gather: (P_pi x)[i] = x[pi[i]].
// Powers compose as pi^i(x) = pi(pi^(i-1)(x)) and are cached on demand.
// Copies share the cache; extension is guarded by a single-writer lock.
class PermutationSpec {
 public:
  explicit PermutationSpec(std::vector<Index> pi);
  static PermutationSpec identity(std::size_t m);

  std::size_t size() const { return pi_.size(); }
  std::span<const Index> indices() const { return pi_; }
  Index operator[](std::size_t i) const { return pi_[i]; }
  const std::vector<std::vector<Index>>& cycles() const { return cycles_; }
  const BigInt& order() const { return order_; }
  bool is_identity() const;

  // pi^p as an index array, extending the cache if needed. The returned span
  // stays valid for the lifetime of any copy of this spec.
  std::span<const Index> power(std::size_t p) const;
  // pi^offset .. pi^(offset+count-1), taking the lock once.
  std::vector<std::span<const Index>> powers(std::size_t offset, std::size_t count) const;
  // Number of powers currently cached.
  std::size_t cached_powers() const;

  PermutationSpec inverse() const;
  // Index array of P_this * P_inner: out[i] = inner[this[i]].
  PermutationSpec compose(const PermutationSpec& inner) const;

  friend bool operator==(const PermutationSpec& a, const PermutationSpec& b) {
    return a.pi_ == b.pi_;
  }

 private:
  struct PowerCache {
    mutable std::shared_mutex mutex;
    std::deque<std::vector<Index>> rows;  // deque keeps row addresses stable
  };

  void extend_locked(std::size_t count) const;

  std::vector<Index> pi_;
  std::vector<std::vector<Index>> cycles_;
  BigInt order_;
  std::shared_ptr<PowerCache> cache_;
};

// Uniform random permutation (Fisher-Yates), deterministic per seed.
PermutationSpec sample_permutation(std::size_t m, std::uint64_t seed);
// Draws from an existing stream, for many samples under one seed.
PermutationSpec sample_permutation(std::size_t m, std::mt19937_64& gen);

// lcm of the cycle lengths; the smallest t >= 1 with pi^t = identity.
BigInt permutation_order(const PermutationSpec& spec);

// Rows 0..L-1 are pi^0 .. pi^(L-1).
IndexMatrix build_power_table(const PermutationSpec& spec, std::size_t length);

// Cycle decomposition of an index array, each cycle starting at its smallest
// element, cycles ordered by that element.
std::vector<std::vector<Index>> cycle_decomposition(std::span<const Index> pi);

// The cycles of spec concatenated, each listed as x, pi(x), pi^2(x), ...
std::vector<Index> cycle_order(const PermutationSpec& spec);

}  // namespace permattn
