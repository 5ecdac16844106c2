#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "permattn/attention.hpp"
#include "permattn/permutation.hpp"

namespace permattn {

// Settings for the verification suite. Read from flat key=value text, one
// pair per line, '#' starts a comment. Keys: L, H, d_head, m, causal, r_min,
// r_max, epsilon, seed, and pi.<head> = comma-separated indices to pin a
// head's permutation.
struct SuiteConfig {
  std::size_t length = 32;
  std::size_t heads = 4;
  std::size_t d_head = 4;
  std::size_t feature_dim = 0;  // 0 -> 4 * d_head
  bool causal = false;
  std::optional<double> r_min;  // unset: 1 bidirectional, 0.88 causal
  std::optional<double> r_max;  // unset: 1 bidirectional, 0.99 causal
  double epsilon = kDefaultEpsilon;
  std::uint64_t seed = 0;
  std::map<std::size_t, std::vector<Index>> permutations;

  std::size_t m() const { return feature_dim ? feature_dim : 4 * d_head; }
  double decay_min() const;
  double decay_max() const;
};

// Throws ConfigError on syntax errors, unknown keys or bad values.
SuiteConfig parse_config(std::istream& in);
SuiteConfig load_config(const std::string& path);

// Builds heads per assign_head_params, then applies any pinned permutations.
// Throws ValidationError for a pinned index array that is not a bijection and
// for decay values the head type forbids.
AttentionConfig to_attention_config(const SuiteConfig& cfg);

}  // namespace permattn
