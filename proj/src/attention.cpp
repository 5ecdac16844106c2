#include "permattn/attention.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "permattn/errors.hpp"
#include "permattn/ops.hpp"

namespace permattn {

using detail::input_grad;
using detail::make_result;
using detail::Node;

AttentionConfig AttentionConfig::make(std::size_t length, std::size_t heads, std::size_t d_head,
                                      bool causal, double r_min, double r_max,
                                      std::uint64_t seed, double epsilon,
                                      std::size_t feature_dim) {
  AttentionConfig cfg;
  cfg.length = length;
  cfg.heads = heads;
  cfg.d_head = d_head;
  cfg.d_model = heads * d_head;
  cfg.feature_dim = feature_dim ? feature_dim : 4 * d_head;
  cfg.causal = causal;
  cfg.fmap = FeatureMapConfig{epsilon, d_head, cfg.feature_dim};
  cfg.head_encodings = assign_head_params(heads, cfg.feature_dim, r_min, r_max, seed, causal);
  cfg.validate();
  return cfg;
}

void AttentionConfig::validate() const {
  if (length == 0 || heads == 0 || d_head == 0) {
    throw UsageError("attention config: L, H and d_head must be positive");
  }
  if (d_model != heads * d_head) {
    throw UsageError("attention config: d_model must equal H * d_head");
  }
  if (feature_dim != fmap.feature_dim || d_head != fmap.input_dim) {
    throw UsageError("attention config: feature map dims disagree with d_head / m");
  }
  fmap.validate();
  if (head_encodings.size() != heads) {
    throw UsageError("attention config: need one head encoding per head");
  }
  for (const auto& h : head_encodings) {
    if (h.spec().size() != feature_dim) {
      throw UsageError("attention config: head permutation size must equal m");
    }
    if (!causal && h.r() != 1.0) {
      throw ValidationError("attention config: bidirectional attention requires r = 1 on every head");
    }
    if (h.causal() != causal) {
      throw UsageError("attention config: head causality disagrees with the config");
    }
  }
}

ProjectionWeights ProjectionWeights::random(std::size_t d_model, std::uint64_t seed,
                                            bool requires_grad) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d_model));
  return {Tensor::randn({d_model, d_model}, seed, sd, requires_grad),
          Tensor::randn({d_model, d_model}, seed + 1, sd, requires_grad),
          Tensor::randn({d_model, d_model}, seed + 2, sd, requires_grad)};
}

ProjectionWeights ProjectionWeights::identity(std::size_t d_model) {
  return {Tensor::eye(d_model), Tensor::eye(d_model), Tensor::eye(d_model)};
}

namespace {

struct Dims {
  std::size_t slices;
  std::size_t length;
  std::size_t width;
};

Dims dims3(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw DimensionError(std::string(what) + ": expected [N, L, d], got " + shape_str(t.shape()));
  }
  return {t.dim(0), t.dim(1), t.dim(2)};
}

void require_match(const Dims& a, const Dims& b, const char* what) {
  if (a.slices != b.slices || a.length != b.length) {
    throw DimensionError(std::string(what) + ": slice/length extents disagree");
  }
}

Tensor split_heads(const Tensor& x2d, std::size_t batch, std::size_t length, std::size_t heads) {
  const std::size_t d_model = x2d.dim(1);
  const std::size_t d_head = d_model / heads;
  static constexpr std::size_t kOrder[] = {0, 2, 1, 3};
  Tensor x4 = ops::reshape(x2d, {batch, length, heads, d_head});
  return ops::reshape(ops::permute_axes(x4, kOrder), {batch * heads, length, d_head});
}

}  // namespace

Qkv project_qkv(const Tensor& x_in, const ProjectionWeights& w, std::size_t heads) {
  const Shape& s = x_in.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw DimensionError("project_qkv: expected [L, d_model] or [B, L, d_model], got " +
                         shape_str(s));
  }
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t length = s[s.size() - 2];
  const std::size_t d_model = s.back();
  if (heads == 0 || d_model % heads != 0) {
    throw DimensionError("project_qkv: d_model " + std::to_string(d_model) +
                         " does not split into " + std::to_string(heads) + " heads");
  }
  for (const Tensor* m : {&w.w_q, &w.w_k, &w.w_v}) {
    if (m->shape() != Shape{d_model, d_model}) {
      throw DimensionError("project_qkv: weight " + shape_str(m->shape()) +
                           " does not match input " + shape_str(s));
    }
  }
  Tensor flat = s.size() == 3 ? ops::reshape(x_in, {batch * length, d_model}) : x_in;
  auto project = [&](const Tensor& weight) {
    return split_heads(ops::matmul(flat, ops::transpose(weight)), batch, length, heads);
  };
  return {project(w.w_q), project(w.w_k), project(w.w_v)};
}

Tensor merge_heads(const Tensor& x, std::size_t heads, bool keep_batch) {
  const Dims d = dims3(x, "merge_heads");
  if (heads == 0 || d.slices % heads != 0) {
    throw DimensionError("merge_heads: slices do not split over heads");
  }
  const std::size_t batch = d.slices / heads;
  static constexpr std::size_t kOrder[] = {0, 2, 1, 3};
  Tensor x4 = ops::reshape(x, {batch, heads, d.length, d.width});
  Tensor merged = ops::permute_axes(x4, kOrder);
  if (batch == 1 && !keep_batch) return ops::reshape(merged, {d.length, heads * d.width});
  return ops::reshape(merged, {batch, d.length, heads * d.width});
}

AttentionResult softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                                  bool keep_weights) {
  const Dims dq = dims3(q, "softmax_attention q");
  const Dims dk = dims3(k, "softmax_attention k");
  const Dims dv = dims3(v, "softmax_attention v");
  require_match(dq, dk, "softmax_attention");
  require_match(dq, dv, "softmax_attention");
  if (dq.width != dk.width) throw DimensionError("softmax_attention: q and k widths differ");

  const std::size_t N = dq.slices, L = dq.length, d = dq.width, dvw = dv.width;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const bool store = keep_weights || q.requires_grad() || k.requires_grad() || v.requires_grad();

  auto qd = q.data(), kd = k.data(), vd = v.data();
  std::vector<double> out(N * L * dvw, 0.0);
  auto alpha = store ? std::make_shared<std::vector<double>>(N * L * L, 0.0) : nullptr;
  std::vector<double> kt(d * L);
  std::vector<double> row(L);

  for (std::size_t n = 0; n < N; ++n) {
    const double* qs = qd.data() + n * L * d;
    const double* ks = kd.data() + n * L * d;
    const double* vs = vd.data() + n * L * dvw;
    for (std::size_t j = 0; j < L; ++j) {
      for (std::size_t c = 0; c < d; ++c) kt[c * L + j] = ks[j * d + c];
    }
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t cols = causal ? i + 1 : L;
      std::fill_n(row.begin(), cols, 0.0);
      for (std::size_t c = 0; c < d; ++c) {
        const double qc = qs[i * d + c];
        const double* kr = kt.data() + c * L;
        for (std::size_t j = 0; j < cols; ++j) row[j] += qc * kr[j];
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < cols; ++j) {
        row[j] *= inv_sqrt_d;
        mx = std::max(mx, row[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      const double inv_z = 1.0 / z;
      double* o = out.data() + (n * L + i) * dvw;
      for (std::size_t j = 0; j < cols; ++j) {
        const double a = row[j] * inv_z;
        row[j] = a;
        const double* vr = vs + j * dvw;
        for (std::size_t c = 0; c < dvw; ++c) o[c] += a * vr[c];
      }
      if (alpha) std::copy_n(row.begin(), cols, alpha->begin() + (n * L + i) * L);
    }
  }

  AttentionResult result;
  result.out = make_result(
      "softmax_attention", {N, L, dvw}, std::move(out), {q, k, v},
      [alpha, N, L, d, dvw, inv_sqrt_d](Node& self) {
        const auto& qv = self.inputs[0]->data;
        const auto& kv = self.inputs[1]->data;
        const auto& vv = self.inputs[2]->data;
        auto* gq = input_grad(self, 0);
        auto* gk = input_grad(self, 1);
        auto* gv = input_grad(self, 2);
        std::vector<double> ds(L);
        for (std::size_t n = 0; n < N; ++n) {
          const double* a = alpha->data() + n * L * L;
          const double* go = self.grad.data() + n * L * dvw;
          for (std::size_t i = 0; i < L; ++i) {
            const double* ai = a + i * L;
            const double* goi = go + i * dvw;
            double dot = 0.0;
            for (std::size_t j = 0; j < L; ++j) {
              double da = 0.0;
              const double* vr = vv.data() + (n * L + j) * dvw;
              for (std::size_t c = 0; c < dvw; ++c) da += goi[c] * vr[c];
              ds[j] = da;
              dot += ai[j] * da;
              if (gv) {
                double* gvr = gv->data() + (n * L + j) * dvw;
                for (std::size_t c = 0; c < dvw; ++c) gvr[c] += ai[j] * goi[c];
              }
            }
            for (std::size_t j = 0; j < L; ++j) {
              const double s = ai[j] * (ds[j] - dot) * inv_sqrt_d;
              if (s == 0.0) continue;
              const double* qi = qv.data() + (n * L + i) * d;
              const double* kj = kv.data() + (n * L + j) * d;
              if (gq) {
                double* g = gq->data() + (n * L + i) * d;
                for (std::size_t c = 0; c < d; ++c) g[c] += s * kj[c];
              }
              if (gk) {
                double* g = gk->data() + (n * L + j) * d;
                for (std::size_t c = 0; c < d; ++c) g[c] += s * qi[c];
              }
            }
          }
        }
      });
  if (keep_weights) result.alpha = Tensor::from({N, L, L}, *alpha);
  return result;
}

AttentionResult kernel_attention_quadratic(const Tensor& qf, const Tensor& kf, const Tensor& v,
                                           bool causal) {
  const Dims dq = dims3(qf, "kernel_attention_quadratic qf");
  const Dims dk = dims3(kf, "kernel_attention_quadratic kf");
  const Dims dv = dims3(v, "kernel_attention_quadratic v");
  require_match(dq, dk, "kernel_attention_quadratic");
  require_match(dq, dv, "kernel_attention_quadratic");
  if (dq.width != dk.width) throw DimensionError("kernel_attention_quadratic: feature dims differ");

  Tensor sim = ops::matmul(qf, ops::transpose(kf));
  if (causal) {
    const std::size_t N = dq.slices, L = dq.length;
    std::vector<double> mask(N * L * L, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j <= i; ++j) mask[(n * L + i) * L + j] = 1.0;
      }
    }
    sim = ops::mul(sim, Tensor::from({N, L, L}, std::move(mask)));
  }
  Tensor den = ops::sum_over_axis(sim, 2);
  Tensor alpha = ops::mul_rows(sim, ops::reciprocal(den, kDenominatorFloor));
  return {ops::matmul(alpha, v), alpha};
}

Tensor kernel_attention_linear(const Tensor& qf, const Tensor& kf, const Tensor& v) {
  const Dims dq = dims3(qf, "kernel_attention_linear qf");
  const Dims dk = dims3(kf, "kernel_attention_linear kf");
  const Dims dv = dims3(v, "kernel_attention_linear v");
  require_match(dq, dk, "kernel_attention_linear");
  require_match(dq, dv, "kernel_attention_linear");
  if (dq.width != dk.width) throw DimensionError("kernel_attention_linear: feature dims differ");

  Tensor kv = ops::matmul_tn(kf, v);                               // [N, m, d]
  Tensor num = ops::matmul(qf, kv);                                 // [N, L, d]
  Tensor ksum = ops::transpose(ops::sum_over_axis(kf, 1, true));    // [N, m, 1]
  Tensor den = ops::matmul(qf, ksum);                               // [N, L, 1]
  return ops::mul_rows(num, ops::reciprocal(den, kDenominatorFloor));
}

namespace {

void guard_denominator(double den, std::size_t n, std::size_t i) {
  if (!(den >= kDenominatorFloor)) {
    throw NumericGuardError("causal_linear_attention: denominator " + std::to_string(den) +
                            " below floor at slice " + std::to_string(n) + ", position " +
                            std::to_string(i));
  }
}

}  // namespace

Tensor causal_linear_attention(const Tensor& qf, const Tensor& kf, const Tensor& v,
                               std::span<const HeadEncoding> heads, std::size_t offset,
                               ScanStats* stats) {
  const Dims dq = dims3(qf, "causal_linear_attention qf");
  const Dims dk = dims3(kf, "causal_linear_attention kf");
  const Dims dv = dims3(v, "causal_linear_attention v");
  require_match(dq, dk, "causal_linear_attention");
  require_match(dq, dv, "causal_linear_attention");
  if (dq.width != dk.width) throw DimensionError("causal_linear_attention: feature dims differ");
  if (heads.empty() || dq.slices % heads.size() != 0) {
    throw DimensionError("causal_linear_attention: slices do not split over heads");
  }
  const std::size_t N = dq.slices, L = dq.length, m = dq.width, d = dv.width;
  for (const auto& h : heads) {
    if (h.spec().size() != m) {
      throw DimensionError("causal_linear_attention: permutation size does not match m");
    }
    if (!(h.r() > 0.0 && h.r() <= 1.0)) {
      throw ValidationError("causal_linear_attention: decay must lie in (0, 1]");
    }
  }

  // Index rows pi^(offset+i), shared across batch slices of the same head.
  auto rows = std::make_shared<std::vector<std::vector<std::span<const Index>>>>();
  auto specs = std::make_shared<std::vector<HeadEncoding>>(heads.begin(), heads.end());
  for (const auto& h : *specs) rows->push_back(h.spec().powers(offset, L));

  auto qd = qf.data(), kd = kf.data(), vd = v.data();
  std::vector<double> out(N * L * d);
  // One recurrent state buffer: S (m x d) then z (m).
  std::vector<double> state(m * (d + 1));
  std::vector<double> qt(m), kt(m);
  if (stats) {
    stats->state_floats_per_head = state.size();
    stats->state_allocations = 1;
    stats->steps = 0;
  }

  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t h = n % specs->size();
    const double r = (*specs)[h].r();
    const auto& idx = (*rows)[h];
    std::fill(state.begin(), state.end(), 0.0);
    double* S = state.data();
    double* z = state.data() + m * d;
    for (std::size_t i = 0; i < L; ++i) {
      const double* qrow = qd.data() + (n * L + i) * m;
      const double* krow = kd.data() + (n * L + i) * m;
      const double* vrow = vd.data() + (n * L + i) * d;
      const Index* ix = idx[i].data();
      for (std::size_t a = 0; a < m; ++a) {
        qt[a] = qrow[ix[a]];
        kt[a] = krow[ix[a]];
      }
      if (r != 1.0) {
        for (auto& s : state) s *= r;
      }
      for (std::size_t a = 0; a < m; ++a) {
        const double ka = kt[a];
        double* Sa = S + a * d;
        for (std::size_t c = 0; c < d; ++c) Sa[c] += ka * vrow[c];
        z[a] += ka;
      }
      double* o = out.data() + (n * L + i) * d;
      std::fill_n(o, d, 0.0);
      double den = 0.0;
      for (std::size_t a = 0; a < m; ++a) {
        const double qa = qt[a];
        const double* Sa = S + a * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += qa * Sa[c];
        den += qa * z[a];
      }
      guard_denominator(den, n, i);
      const double inv = 1.0 / den;
      for (std::size_t c = 0; c < d; ++c) o[c] *= inv;
      if (stats) ++stats->steps;
    }
  }

  return make_result(
      "causal_linear_attention", {N, L, d}, std::move(out), {qf, kf, v},
      [rows, specs, N, L, m, d](Node& self) {
        const auto& qv = self.inputs[0]->data;
        const auto& kv = self.inputs[1]->data;
        const auto& vv = self.inputs[2]->data;
        auto* gq = input_grad(self, 0);
        auto* gk = input_grad(self, 1);
        auto* gv = input_grad(self, 2);
        std::vector<double> state(m * (d + 1));
        std::vector<double> gnum(L * d), gden(L);
        std::vector<double> qt(m), kt(m), gvec(m);
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t h = n % specs->size();
          const double r = (*specs)[h].r();
          const auto& idx = (*rows)[h];
          double* S = state.data();
          double* z = state.data() + m * d;

          // Forward replay: gradients of the normalized output w.r.t. numerator
          // and denominator, and the query-side gradient.
          std::fill(state.begin(), state.end(), 0.0);
          for (std::size_t i = 0; i < L; ++i) {
            const std::size_t row = n * L + i;
            const Index* ix = idx[i].data();
            for (std::size_t a = 0; a < m; ++a) {
              qt[a] = qv[row * m + ix[a]];
              kt[a] = kv[row * m + ix[a]];
            }
            if (r != 1.0) {
              for (auto& s : state) s *= r;
            }
            for (std::size_t a = 0; a < m; ++a) {
              for (std::size_t c = 0; c < d; ++c) S[a * d + c] += kt[a] * vv[row * d + c];
              z[a] += kt[a];
            }
            double den = 0.0;
            for (std::size_t a = 0; a < m; ++a) den += qt[a] * z[a];
            const double* go = self.grad.data() + row * d;
            const double* o = self.data.data() + row * d;
            double go_dot_o = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              gnum[i * d + c] = go[c] / den;
              go_dot_o += go[c] * o[c];
            }
            gden[i] = -go_dot_o / den;
            if (gq) {
              for (std::size_t a = 0; a < m; ++a) {
                double g = z[a] * gden[i];
                for (std::size_t c = 0; c < d; ++c) g += S[a * d + c] * gnum[i * d + c];
                (*gq)[row * m + ix[a]] += g;
              }
            }
          }
          if (!gk && !gv) continue;

          // Reverse sweep: G_S accumulates r^(i-j) q_i gnum_i^T over i >= j.
          std::fill(state.begin(), state.end(), 0.0);
          double* GS = S;
          double* Gz = z;
          for (std::size_t j = L; j-- > 0;) {
            const std::size_t row = n * L + j;
            const Index* ix = idx[j].data();
            for (std::size_t a = 0; a < m; ++a) {
              qt[a] = qv[row * m + ix[a]];
              kt[a] = kv[row * m + ix[a]];
            }
            if (r != 1.0) {
              for (auto& s : state) s *= r;
            }
            for (std::size_t a = 0; a < m; ++a) {
              for (std::size_t c = 0; c < d; ++c) GS[a * d + c] += qt[a] * gnum[j * d + c];
              Gz[a] += qt[a] * gden[j];
            }
            if (gk) {
              for (std::size_t a = 0; a < m; ++a) {
                double g = Gz[a];
                for (std::size_t c = 0; c < d; ++c) g += GS[a * d + c] * vv[row * d + c];
                (*gk)[row * m + ix[a]] += g;
              }
            }
            if (gv) {
              for (std::size_t a = 0; a < m; ++a) {
                for (std::size_t c = 0; c < d; ++c) (*gv)[row * d + c] += GS[a * d + c] * kt[a];
              }
            }
          }
        }
      });
}

Tensor performer_attention(const Tensor& x_in, const ProjectionWeights& w, const FeatureMap& fmap,
                           std::size_t heads, bool causal) {
  Qkv qkv = project_qkv(x_in, w, heads);
  Tensor qf = fmap(qkv.q);
  Tensor kf = fmap(qkv.k);
  Tensor out;
  if (causal) {
    const auto plain = identity_heads(heads, fmap.config().feature_dim, true);
    out = causal_linear_attention(qf, kf, qkv.v, plain);
  } else {
    out = kernel_attention_linear(qf, kf, qkv.v);
  }
  return merge_heads(out, heads, x_in.rank() == 3);
}

Tensor permuteformer_attention(const Tensor& x_in, const ProjectionWeights& w,
                               const FeatureMap& fmap, const AttentionConfig& cfg,
                               std::size_t offset) {
  cfg.validate();
  if (fmap.config().feature_dim != cfg.feature_dim || fmap.config().input_dim != cfg.d_head) {
    throw DimensionError("permuteformer_attention: feature map does not match the config");
  }
  Qkv qkv = project_qkv(x_in, w, cfg.heads);
  Tensor out;
  if (cfg.causal) {
    out = causal_linear_attention(fmap(qkv.q), fmap(qkv.k), qkv.v, cfg.head_encodings, offset);
  } else {
    Tensor qe = fmap.encoded(qkv.q, cfg.head_encodings, Side::Query, offset);
    Tensor ke = fmap.encoded(qkv.k, cfg.head_encodings, Side::Key, offset);
    out = kernel_attention_linear(qe, ke, qkv.v);
  }
  return merge_heads(out, cfg.heads, x_in.rank() == 3);
}

Tensor permuteformer_attention_2d(const Tensor& x_in, const ProjectionWeights& w,
                                  const FeatureMap& fmap, std::size_t heads,
                                  std::span<const TwoDEncoding> encs,
                                  std::span<const Position2D> positions, const Grid& grid) {
  if (encs.size() != heads) throw UsageError("permuteformer_attention_2d: need one encoding per head");
  Qkv qkv = project_qkv(x_in, w, heads);
  Tensor qe = encode_2d_heads(fmap(qkv.q), encs, positions, grid);
  Tensor ke = encode_2d_heads(fmap(qkv.k), encs, positions, grid);
  return merge_heads(kernel_attention_linear(qe, ke, qkv.v), heads, x_in.rank() == 3);
}

Tensor softmax_pipeline(const Tensor& x_in, const ProjectionWeights& w, std::size_t heads,
                        bool causal) {
  Qkv qkv = project_qkv(x_in, w, heads);
  return merge_heads(softmax_attention(qkv.q, qkv.k, qkv.v, causal, false).out, heads,
                     x_in.rank() == 3);
}

}  // namespace permattn
