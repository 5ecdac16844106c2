#include "permattn/position_encoding.hpp"

#include <cmath>
#include <memory>
#include <numeric>

#include "permattn/errors.hpp"
#include "permattn/ops.hpp"

namespace permattn {

HeadEncoding::HeadEncoding(PermutationSpec spec, double r, std::size_t head_index, bool causal)
    : spec_(std::move(spec)), r_(r), head_index_(head_index), causal_(causal) {
  if (causal) {
    if (!(r > 0.0 && r < 1.0) && r != 1.0) {
      throw ValidationError("causal head decay must lie in (0, 1], got " + std::to_string(r));
    }
  } else if (r != 1.0) {
    throw ValidationError("bidirectional heads require r = 1 (got r = " + std::to_string(r) +
                          "); r^-j grows without bound when positions run in both directions");
  }
}

std::vector<HeadEncoding> assign_head_params(std::size_t heads, std::size_t m, double r_min,
                                             double r_max, std::uint64_t base_seed, bool causal) {
  if (heads == 0) throw UsageError("assign_head_params: need at least one head");
  if (!(r_min > 0.0 && r_min <= r_max && r_max <= 1.0)) {
    throw UsageError("assign_head_params: need 0 < r_min <= r_max <= 1, got [" +
                     std::to_string(r_min) + ", " + std::to_string(r_max) + "]");
  }
  std::vector<HeadEncoding> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    double r = 1.0;
    if (causal) {
      r = heads == 1 ? r_min
                     : r_min + (r_max - r_min) * static_cast<double>(h) /
                                   static_cast<double>(heads - 1);
    } else if (r_min != 1.0 || r_max != 1.0) {
      throw ValidationError("bidirectional heads require r = 1, got range [" +
                            std::to_string(r_min) + ", " + std::to_string(r_max) + "]");
    }
    out.emplace_back(sample_permutation(m, base_seed + h), r, h, causal);
  }
  return out;
}

std::vector<HeadEncoding> identity_heads(std::size_t heads, std::size_t m, bool causal) {
  std::vector<HeadEncoding> out;
  out.reserve(heads);
  const auto id = PermutationSpec::identity(m);
  for (std::size_t h = 0; h < heads; ++h) out.emplace_back(id, 1.0, h, causal);
  return out;
}

namespace {

Tensor apply_decay(const Tensor& gathered, std::span<const HeadEncoding> heads, Side side,
                   std::size_t slices, std::size_t length, std::size_t offset) {
  bool any = false;
  for (const auto& h : heads) any = any || h.r() != 1.0;
  if (!any) return gathered;
  std::vector<double> factors(slices * length);
  for (std::size_t n = 0; n < slices; ++n) {
    const double r = heads[n % heads.size()].r();
    for (std::size_t t = 0; t < length; ++t) {
      const double p = static_cast<double>(offset + t);
      factors[n * length + t] = std::pow(r, side == Side::Query ? p : -p);
    }
  }
  return ops::mul_rows(gathered, Tensor::from({slices, length}, std::move(factors)));
}

}  // namespace

Tensor encode_heads(const Tensor& features, std::span<const HeadEncoding> heads, Side side,
                    std::size_t offset) {
  const Shape& s = features.shape();
  if (s.size() != 3) throw DimensionError("encode_heads: expected [N, L, m], got " + shape_str(s));
  if (heads.empty() || s[0] % heads.size() != 0) {
    throw DimensionError("encode_heads: " + std::to_string(s[0]) + " slices do not split over " +
                         std::to_string(heads.size()) + " heads");
  }
  const std::size_t slices = s[0], length = s[1], m = s[2];
  for (const auto& h : heads) {
    if (h.spec().size() != m) {
      throw DimensionError("encode_heads: permutation size " + std::to_string(h.spec().size()) +
                           " does not match feature dim " + std::to_string(m));
    }
  }
  // Gather straight from the cached power rows; slices of the same head
  // share them. The copies keep the spans alive for the backward pass.
  auto specs = std::make_shared<std::vector<PermutationSpec>>();
  auto rows = std::make_shared<std::vector<std::vector<std::span<const Index>>>>();
  for (const auto& h : heads) {
    specs->push_back(h.spec());
    rows->push_back(h.spec().powers(offset, length));
  }
  const std::size_t H = heads.size();
  auto in = features.data();
  std::vector<double> out(in.size());
  for (std::size_t n = 0; n < slices; ++n) {
    const auto& hr = (*rows)[n % H];
    for (std::size_t t = 0; t < length; ++t) {
      const double* src = in.data() + (n * length + t) * m;
      double* dst = out.data() + (n * length + t) * m;
      const Index* ix = hr[t].data();
      for (std::size_t x = 0; x < m; ++x) dst[x] = src[ix[x]];
    }
  }
  Tensor gathered = detail::make_result("encode", s, std::move(out), {features}, nullptr);
  if (gathered.requires_grad()) {
    gathered.node()->backward = [specs, rows, slices, length, m, H](detail::Node& self) {
      auto* gx = detail::input_grad(self, 0);
      if (!gx) return;
      for (std::size_t n = 0; n < slices; ++n) {
        const auto& hr = (*rows)[n % H];
        for (std::size_t t = 0; t < length; ++t) {
          const std::size_t base = (n * length + t) * m;
          const Index* ix = hr[t].data();
          for (std::size_t x = 0; x < m; ++x) (*gx)[base + ix[x]] += self.grad[base + x];
        }
      }
    };
  }
  return apply_decay(gathered, heads, side, slices, length, offset);
}

Tensor encode(const Tensor& features, const HeadEncoding& enc, Side side, std::size_t offset,
              bool check_positive) {
  if (features.rank() != 2) {
    throw DimensionError("encode: expected [L, m], got " + shape_str(features.shape()));
  }
  if (check_positive) {
    for (double v : features.data()) {
      if (!(v > 0.0)) throw ValidationError("encode: features must be elementwise positive");
    }
  }
  const std::size_t length = features.dim(0), m = features.dim(1);
  Tensor stacked = ops::reshape(features, {1, length, m});
  Tensor out = encode_heads(stacked, std::span<const HeadEncoding>(&enc, 1), side, offset);
  return ops::reshape(out, {length, m});
}

bool permutations_commute(const PermutationSpec& a, const PermutationSpec& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[b[i]] != b[a[i]]) return false;
  }
  return true;
}

TwoDEncoding::TwoDEncoding(PermutationSpec pi_x, PermutationSpec pi_y)
    : pi_x_(std::move(pi_x)), pi_y_(std::move(pi_y)) {
  if (pi_x_.size() != pi_y_.size()) {
    throw ValidationError("2D encoding permutations must act on the same feature dim");
  }
  if (!permutations_commute(pi_x_, pi_y_)) {
    throw ValidationError("2D encoding permutations do not commute");
  }
}

TwoDEncoding TwoDEncoding::disjoint(std::size_t m, std::uint64_t seed) {
  if (m < 2) throw UsageError("2D encoding needs m >= 2 to split the feature indices");
  const std::size_t half = m / 2;
  const auto px = sample_permutation(half, seed);
  const auto py = sample_permutation(m - half, seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Index> x(m), y(m);
  std::iota(x.begin(), x.end(), Index{0});
  std::iota(y.begin(), y.end(), Index{0});
  for (std::size_t i = 0; i < half; ++i) x[i] = px[i];
  for (std::size_t i = 0; i < m - half; ++i) y[half + i] = static_cast<Index>(half + py[i]);
  return TwoDEncoding(PermutationSpec(std::move(x)), PermutationSpec(std::move(y)));
}

std::vector<Index> TwoDEncoding::index_for(const Position2D& p) const {
  // (P_a P_b v)[i] = v[b[a[i]]]
  auto ax = pi_x_.power(p.x);
  auto by = pi_y_.power(p.y);
  std::vector<Index> idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = by[ax[i]];
  return idx;
}

Tensor encode_2d_heads(const Tensor& features, std::span<const TwoDEncoding> encs,
                       std::span<const Position2D> positions, const Grid& grid) {
  const Shape& s = features.shape();
  if (s.size() != 3) throw DimensionError("encode_2d_heads: expected [N, P, m], got " + shape_str(s));
  if (encs.empty() || s[0] % encs.size() != 0) {
    throw DimensionError("encode_2d_heads: slices do not split over encodings");
  }
  const std::size_t slices = s[0], count = s[1], m = s[2];
  if (positions.size() != count) {
    throw DimensionError("encode_2d: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(count) + " features");
  }
  for (const auto& p : positions) {
    if (!grid.contains(p)) throw ValidationError("encode_2d: position outside the grid");
  }
  for (const auto& e : encs) {
    if (e.size() != m) throw DimensionError("encode_2d: permutation size does not match feature dim");
  }
  std::vector<Index> idx(features.numel());
  for (std::size_t n = 0; n < slices; ++n) {
    const auto& enc = encs[n % encs.size()];
    for (std::size_t t = 0; t < count; ++t) {
      auto row = enc.index_for(positions[t]);
      std::copy(row.begin(), row.end(), idx.begin() + (n * count + t) * m);
    }
  }
  return ops::gather_rows(features, idx);
}

Tensor encode_2d(const Tensor& features, const TwoDEncoding& enc,
                 std::span<const Position2D> positions, const Grid& grid) {
  const Shape& s = features.shape();
  if (s.size() < 2) throw DimensionError("encode_2d: expected [..., N, m], got " + shape_str(s));
  const std::size_t count = s[s.size() - 2], m = s.back();
  const std::size_t slices = features.numel() / (count * m);
  Tensor stacked = ops::reshape(features, {slices, count, m});
  Tensor out = encode_2d_heads(stacked, std::span<const TwoDEncoding>(&enc, 1), positions, grid);
  return ops::reshape(out, s);
}

}  // namespace permattn
