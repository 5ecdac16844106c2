#include "permattn/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "permattn/errors.hpp"

namespace permattn {

double SuiteConfig::decay_min() const { return r_min.value_or(causal ? 0.88 : 1.0); }
double SuiteConfig::decay_max() const { return r_max.value_or(causal ? 0.99 : 1.0); }

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& value, const std::string& key, int line) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  std::from_chars_result res;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is not in libstdc++ 11; strtod is locale-bound but fine here
    char* end = nullptr;
    out = std::strtod(first, &end);
    res.ptr = end;
    res.ec = end == first ? std::errc::invalid_argument : std::errc{};
  } else {
    res = std::from_chars(first, last, out);
  }
  if (res.ec != std::errc{} || res.ptr != last) {
    throw ConfigError("line " + std::to_string(line) + ": bad value '" + value + "' for " + key);
  }
  return out;
}

bool parse_bool(const std::string& value, const std::string& key, int line) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("line " + std::to_string(line) + ": bad boolean '" + value + "' for " + key);
}

std::vector<Index> parse_indices(const std::string& value, const std::string& key, int line) {
  std::vector<Index> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_number<Index>(trim(item), key, line));
  }
  if (out.empty()) throw ConfigError("line " + std::to_string(line) + ": empty permutation");
  return out;
}

}  // namespace

SuiteConfig parse_config(std::istream& in) {
  SuiteConfig cfg;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line) + ": expected key=value, got '" + text + "'");
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (value.empty()) throw ConfigError("line " + std::to_string(line) + ": empty value for " + key);

    if (key == "L") cfg.length = parse_number<std::size_t>(value, key, line);
    else if (key == "H") cfg.heads = parse_number<std::size_t>(value, key, line);
    else if (key == "d_head") cfg.d_head = parse_number<std::size_t>(value, key, line);
    else if (key == "m") cfg.feature_dim = parse_number<std::size_t>(value, key, line);
    else if (key == "causal") cfg.causal = parse_bool(value, key, line);
    else if (key == "r_min") cfg.r_min = parse_number<double>(value, key, line);
    else if (key == "r_max") cfg.r_max = parse_number<double>(value, key, line);
    else if (key == "epsilon") cfg.epsilon = parse_number<double>(value, key, line);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(value, key, line);
    else if (key.rfind("pi.", 0) == 0) {
      const auto head = parse_number<std::size_t>(key.substr(3), key, line);
      cfg.permutations[head] = parse_indices(value, key, line);
    } else {
      throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
  }
  if (cfg.length == 0 || cfg.heads == 0 || cfg.d_head == 0) {
    throw ConfigError("L, H and d_head must be positive");
  }
  if (cfg.feature_dim != 0 && cfg.feature_dim < cfg.d_head) {
    throw ConfigError("m must be at least d_head");
  }
  if (!(cfg.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  for (const auto& [head, pi] : cfg.permutations) {
    if (head >= cfg.heads) throw ConfigError("pi." + std::to_string(head) + ": no such head");
  }
  return cfg;
}

SuiteConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(in);
}

AttentionConfig to_attention_config(const SuiteConfig& cfg) {
  const double lo = cfg.decay_min(), hi = cfg.decay_max();
  if (!cfg.causal && (lo != 1.0 || hi != 1.0)) {
    throw ValidationError("bidirectional attention requires r = 1 on every head (got r in [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "])");
  }
  AttentionConfig ac = AttentionConfig::make(cfg.length, cfg.heads, cfg.d_head, cfg.causal, lo, hi,
                                             cfg.seed, cfg.epsilon, cfg.m());
  for (const auto& [head, pi] : cfg.permutations) {
    if (pi.size() != cfg.m()) {
      throw ValidationError("pi." + std::to_string(head) + " has " + std::to_string(pi.size()) +
                            " entries, expected m = " + std::to_string(cfg.m()));
    }
    const auto& old = ac.head_encodings[head];
    ac.head_encodings[head] = HeadEncoding(PermutationSpec(pi), old.r(), head, cfg.causal);
  }
  ac.validate();
  return ac;
}

}  // namespace permattn
