#include "permattn/permutation.hpp"

#include <algorithm>
#include <mutex>
#include <numeric>
#include <random>

#include "permattn/errors.hpp"
#include "permattn/ops.hpp"

namespace permattn {

BigInt lcm(const BigInt& a, const BigInt& b) {
  if (a == 0 || b == 0) return 0;
  return a / boost::multiprecision::gcd(a, b) * b;
}

std::vector<std::vector<Index>> cycle_decomposition(std::span<const Index> pi) {
  std::vector<std::vector<Index>> cycles;
  std::vector<bool> seen(pi.size(), false);
  for (Index start = 0; start < pi.size(); ++start) {
    if (seen[start]) continue;
    std::vector<Index> cycle;
    for (Index x = start; !seen[x]; x = pi[x]) {
      seen[x] = true;
      cycle.push_back(x);
    }
    cycles.push_back(std::move(cycle));
  }
  return cycles;
}

std::vector<Index> cycle_order(const PermutationSpec& spec) {
  std::vector<Index> out;
  out.reserve(spec.size());
  for (const auto& c : spec.cycles()) out.insert(out.end(), c.begin(), c.end());
  return out;
}

PermutationSpec::PermutationSpec(std::vector<Index> pi)
    : pi_(std::move(pi)), cache_(std::make_shared<PowerCache>()) {
  if (pi_.empty()) throw UsageError("permutation size must be at least 1");
  if (!ops::is_permutation(pi_)) {
    throw ValidationError("index array is not a bijection on 0..m-1");
  }
  cycles_ = cycle_decomposition(pi_);
  order_ = 1;
  for (const auto& c : cycles_) order_ = lcm(order_, BigInt(c.size()));
  std::vector<Index> id(pi_.size());
  std::iota(id.begin(), id.end(), Index{0});
  cache_->rows.push_back(std::move(id));
}

PermutationSpec PermutationSpec::identity(std::size_t m) {
  std::vector<Index> id(m);
  std::iota(id.begin(), id.end(), Index{0});
  return PermutationSpec(std::move(id));
}

bool PermutationSpec::is_identity() const {
  for (std::size_t i = 0; i < pi_.size(); ++i) {
    if (pi_[i] != i) return false;
  }
  return true;
}

void PermutationSpec::extend_locked(std::size_t count) const {
  auto& rows = cache_->rows;
  while (rows.size() < count) {
    const auto& prev = rows.back();
    std::vector<Index> next(pi_.size());
    for (std::size_t x = 0; x < pi_.size(); ++x) next[x] = pi_[prev[x]];
    rows.push_back(std::move(next));
  }
}

std::span<const Index> PermutationSpec::power(std::size_t p) const {
  {
    std::shared_lock lock(cache_->mutex);
    if (p < cache_->rows.size()) return cache_->rows[p];
  }
  std::unique_lock lock(cache_->mutex);
  extend_locked(p + 1);
  return cache_->rows[p];
}

std::vector<std::span<const Index>> PermutationSpec::powers(std::size_t offset,
                                                            std::size_t count) const {
  std::vector<std::span<const Index>> out;
  out.reserve(count);
  {
    std::shared_lock lock(cache_->mutex);
    if (offset + count <= cache_->rows.size()) {
      for (std::size_t i = 0; i < count; ++i) out.emplace_back(cache_->rows[offset + i]);
      return out;
    }
  }
  std::unique_lock lock(cache_->mutex);
  extend_locked(offset + count);
  for (std::size_t i = 0; i < count; ++i) out.emplace_back(cache_->rows[offset + i]);
  return out;
}

std::size_t PermutationSpec::cached_powers() const {
  std::shared_lock lock(cache_->mutex);
  return cache_->rows.size();
}

PermutationSpec PermutationSpec::inverse() const {
  std::vector<Index> inv(pi_.size());
  for (std::size_t i = 0; i < pi_.size(); ++i) inv[pi_[i]] = static_cast<Index>(i);
  return PermutationSpec(std::move(inv));
}

PermutationSpec PermutationSpec::compose(const PermutationSpec& inner) const {
  if (inner.size() != size()) throw DimensionError("compose: permutation sizes differ");
  std::vector<Index> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = inner.pi_[pi_[i]];
  return PermutationSpec(std::move(out));
}

PermutationSpec sample_permutation(std::size_t m, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return sample_permutation(m, gen);
}

PermutationSpec sample_permutation(std::size_t m, std::mt19937_64& gen) {
  if (m == 0) throw UsageError("sample_permutation: m must be at least 1");
  std::vector<Index> pi(m);
  std::iota(pi.begin(), pi.end(), Index{0});
  // Fisher-Yates
  for (std::size_t i = m - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(pi[i], pi[pick(gen)]);
  }
  return PermutationSpec(std::move(pi));
}

BigInt permutation_order(const PermutationSpec& spec) { return spec.order(); }

IndexMatrix build_power_table(const PermutationSpec& spec, std::size_t length) {
  if (length == 0) throw UsageError("build_power_table: length must be at least 1");
  IndexMatrix table;
  table.rows = length;
  table.cols = spec.size();
  table.values.reserve(length * spec.size());
  for (auto row : spec.powers(0, length)) {
    table.values.insert(table.values.end(), row.begin(), row.end());
  }
  return table;
}

}  // namespace permattn
