#include "permattn/feature_map.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "permattn/errors.hpp"
#include "permattn/ops.hpp"

namespace permattn {

FeatureMapConfig FeatureMapConfig::for_head_dim(std::size_t d, double epsilon) {
  FeatureMapConfig cfg;
  cfg.epsilon = epsilon;
  cfg.input_dim = d;
  cfg.feature_dim = 4 * d;
  return cfg;
}

void FeatureMapConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw UsageError("feature map epsilon must be positive, got " + std::to_string(epsilon));
  }
  if (input_dim == 0) throw UsageError("feature map input dim must be positive");
  if (feature_dim < input_dim) {
    throw UsageError("feature dim " + std::to_string(feature_dim) + " must be >= input dim " +
                     std::to_string(input_dim));
  }
}

FeatureMap::FeatureMap(FeatureMapConfig cfg, std::uint64_t seed, bool trainable) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.input_dim, m = cfg_.feature_dim;
  if (m == d) {
    lift_ = Tensor::eye(d, trainable);
  } else {
    lift_ = Tensor::randn({d, m}, seed, 1.0 / std::sqrt(static_cast<double>(d)), trainable);
  }
}

FeatureMap::FeatureMap(FeatureMapConfig cfg, Tensor lift) : cfg_(cfg), lift_(std::move(lift)) {
  cfg_.validate();
  if (lift_.shape() != Shape{cfg_.input_dim, cfg_.feature_dim}) {
    throw DimensionError("feature map lift must be " +
                         shape_str({cfg_.input_dim, cfg_.feature_dim}) + ", got " +
                         shape_str(lift_.shape()));
  }
}

namespace {

// P^p in a head's cycle basis: every cycle fills a contiguous block and
// v[s + b] = u[s + (b + p) mod len], followed by the decay factor r^(+-p).
struct Rotation {
  struct Head {
    std::vector<std::pair<std::size_t, std::size_t>> blocks;  // (start, len)
    double decay = 1.0;
  };
  std::vector<Head> heads;
  Side side = Side::Query;
  std::size_t offset = 0;
  std::size_t length = 0;
};

// f(row, scale, start, len, shift) for every block of every row.
template <class F>
void for_blocks(const Rotation& rot, std::size_t rows, F f) {
  const std::size_t L = rot.length, H = rot.heads.size();
  for (std::size_t n = 0; n < rows / L; ++n) {
    const Rotation::Head& h = rot.heads[n % H];
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t p = rot.offset + t;
      const double fp = static_cast<double>(p);
      const double scale =
          h.decay == 1.0 ? 1.0 : std::pow(h.decay, rot.side == Side::Query ? fp : -fp);
      for (const auto& [start, len] : h.blocks) f(n * L + t, scale, start, len, p % len);
    }
  }
}

// max(lifted, 0) + eps over rows of width m, optionally rotated and scaled
// per row, written out with the given shape.
Tensor relu_eps(const Tensor& lifted, double eps, std::shared_ptr<const Rotation> rot,
                Shape shape) {
  const std::size_t m = shape.back();
  const std::size_t rows = lifted.numel() / m;
  const double* in = lifted.data().data();
  std::vector<double> out(rows * m);
  if (rot) {
    for_blocks(*rot, rows, [&](std::size_t r, double sc, std::size_t s, std::size_t len,
                               std::size_t k) {
      const double* src = in + r * m + s;
      double* dst = out.data() + r * m + s;
      for (std::size_t b = 0; b < len - k; ++b) dst[b] = sc * (std::max(src[b + k], 0.0) + eps);
      for (std::size_t b = len - k; b < len; ++b) {
        dst[b] = sc * (std::max(src[b + k - len], 0.0) + eps);
      }
    });
  } else {
    for (std::size_t i = 0; i < rows * m; ++i) out[i] = std::max(in[i], 0.0) + eps;
  }
  Tensor result = detail::make_result(rot ? "phi_encoded" : "phi", std::move(shape),
                                      std::move(out), {lifted}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward = [rot, rows, m](detail::Node& self) {
      auto* gl = detail::input_grad(self, 0);
      if (!gl) return;
      const double* in = self.inputs[0]->data.data();
      const double* g = self.grad.data();
      if (!rot) {
        for (std::size_t i = 0; i < rows * m; ++i) {
          if (in[i] > 0.0) (*gl)[i] += g[i];
        }
        return;
      }
      for_blocks(*rot, rows, [&](std::size_t r, double sc, std::size_t s, std::size_t len,
                                 std::size_t k) {
        const std::size_t base = r * m + s;
        for (std::size_t b = 0; b < len; ++b) {
          const std::size_t src = base + (b + k < len ? b + k : b + k - len);
          if (in[src] > 0.0) (*gl)[src] += sc * g[base + b];
        }
      });
    };
  }
  return result;
}

// [d, m] lift -> [N, d, m] with the columns of slice n in head n % H's order.
Tensor lift_per_slice(const Tensor& lift, const std::vector<std::vector<Index>>& orders,
                      std::size_t slices) {
  const std::size_t d = lift.dim(0), m = lift.dim(1), H = orders.size();
  const double* w = lift.data().data();
  std::vector<double> out(slices * d * m);
  for (std::size_t n = 0; n < slices; ++n) {
    const Index* o = orders[n % H].data();
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t a = 0; a < m; ++a) out[(n * d + i) * m + a] = w[i * m + o[a]];
    }
  }
  auto saved = std::make_shared<std::vector<std::vector<Index>>>(orders);
  return detail::make_result("lift_per_slice", {slices, d, m}, std::move(out), {lift},
                             [saved, slices, d, m](detail::Node& self) {
                               auto* gw = detail::input_grad(self, 0);
                               if (!gw) return;
                               const std::size_t H = saved->size();
                               for (std::size_t n = 0; n < slices; ++n) {
                                 const Index* o = (*saved)[n % H].data();
                                 for (std::size_t i = 0; i < d; ++i) {
                                   for (std::size_t a = 0; a < m; ++a) {
                                     (*gw)[i * m + o[a]] += self.grad[(n * d + i) * m + a];
                                   }
                                 }
                               }
                             });
}

}  // namespace

Tensor FeatureMap::operator()(const Tensor& x) const {
  const Shape& sx = x.shape();
  if (sx.empty() || sx.back() != cfg_.input_dim) {
    throw DimensionError("phi: expected last extent " + std::to_string(cfg_.input_dim) +
                         ", got " + shape_str(sx));
  }
  const std::size_t rows = x.numel() / cfg_.input_dim;
  Tensor lifted = ops::matmul(ops::reshape(x, {rows, cfg_.input_dim}), lift_);
  Shape so = sx;
  so.back() = cfg_.feature_dim;
  return relu_eps(lifted, cfg_.epsilon, nullptr, std::move(so));
}

Tensor FeatureMap::encoded(const Tensor& x, std::span<const HeadEncoding> heads, Side side,
                           std::size_t offset) const {
  const Shape& sx = x.shape();
  if (sx.size() != 3 || sx[2] != cfg_.input_dim) {
    throw DimensionError("phi: expected [N, L, " + std::to_string(cfg_.input_dim) + "], got " +
                         shape_str(sx));
  }
  const std::size_t m = cfg_.feature_dim;
  if (heads.empty() || sx[0] % heads.size() != 0) {
    throw DimensionError("encode_heads: " + std::to_string(sx[0]) + " slices do not split over " +
                         std::to_string(heads.size()) + " heads");
  }
  auto rot = std::make_shared<Rotation>();
  rot->side = side;
  rot->offset = offset;
  rot->length = sx[1];
  std::vector<std::vector<Index>> orders;
  for (const auto& h : heads) {
    if (h.spec().size() != m) {
      throw DimensionError("encode_heads: permutation size " + std::to_string(h.spec().size()) +
                           " does not match feature dim " + std::to_string(m));
    }
    Rotation::Head rh;
    rh.decay = h.r();
    std::size_t start = 0;
    for (const auto& c : h.spec().cycles()) {
      rh.blocks.emplace_back(start, c.size());
      start += c.size();
    }
    rot->heads.push_back(std::move(rh));
    orders.push_back(cycle_order(h.spec()));
  }
  if (sx[0] * sx[1] == 0) return ops::reshape(x, {sx[0], sx[1], m});
  Tensor lifted = ops::matmul(x, lift_per_slice(lift_, orders, sx[0]));  // [N, L, m]
  return relu_eps(lifted, cfg_.epsilon, std::move(rot), {sx[0], sx[1], m});
}

Tensor phi(const Tensor& x, const FeatureMap& map) { return map(x); }

}  // namespace permattn
