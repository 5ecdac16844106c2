#include "permattn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>

#include "permattn/errors.hpp"

namespace permattn::ops {

using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// C[p, r] += A[p, q] * B[q, r]
void gemm_nn(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r) {
  const auto P = static_cast<Eigen::Index>(p), Q = static_cast<Eigen::Index>(q),
             R = static_cast<Eigen::Index>(r);
  MMap(c, P, R).noalias() += CMap(a, P, Q) * CMap(b, Q, R);
}

// C[p, q] += G[p, r] * B[q, r]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r) {
  const auto P = static_cast<Eigen::Index>(p), Q = static_cast<Eigen::Index>(q),
             R = static_cast<Eigen::Index>(r);
  MMap(c, P, Q).noalias() += CMap(g, P, R) * CMap(b, Q, R).transpose();
}

// C[q, r] += A[p, q]^T * G[p, r]
void gemm_tn(const double* a, const double* g, double* c, std::size_t p, std::size_t q,
             std::size_t r) {
  const auto P = static_cast<Eigen::Index>(p), Q = static_cast<Eigen::Index>(q),
             R = static_cast<Eigen::Index>(r);
  MMap(c, Q, R).noalias() += CMap(a, P, Q).transpose() * CMap(g, P, R);
}

template <class F>
Tensor unary(const char* name, const Tensor& x, F f) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(name, x.shape(), std::move(out), {x}, nullptr);
}

}  // namespace

bool is_permutation(std::span<const std::uint32_t> idx) {
  std::vector<bool> seen(idx.size(), false);
  for (auto v : idx) {
    if (v >= idx.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  };
  if (sa.size() < 2 || sa.size() != sb.size()) throw mismatch();
  const std::size_t rank = sa.size();
  for (std::size_t i = 0; i + 2 < rank; ++i) {
    if (sa[i] != sb[i]) throw mismatch();
  }
  const std::size_t p = sa[rank - 2], q = sa[rank - 1], r = sb[rank - 1];
  if (sb[rank - 2] != q) throw mismatch();
  const std::size_t batch = a.numel() / (p * q);

  Shape so = sa;
  so[rank - 1] = r;
  std::vector<double> out(batch * p * r, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    gemm_nn(ad + n * p * q, bd + n * q * r, out.data() + n * p * r, p, q, r);
  }
  return make_result("matmul", std::move(so), std::move(out), {a, b},
                     [batch, p, q, r](Node& self) {
                       const double* g = self.grad.data();
                       const Node& an = *self.inputs[0];
                       const Node& bn = *self.inputs[1];
                       if (auto* ga = input_grad(self, 0)) {
                         for (std::size_t n = 0; n < batch; ++n) {
                           gemm_nt(g + n * p * r, bn.data.data() + n * q * r,
                                   ga->data() + n * p * q, p, q, r);
                         }
                       }
                       if (auto* gb = input_grad(self, 1)) {
                         for (std::size_t n = 0; n < batch; ++n) {
                           gemm_tn(an.data.data() + n * p * q, g + n * p * r,
                                   gb->data() + n * q * r, p, q, r);
                         }
                       }
                     });
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul_tn: incompatible shapes " + shape_str(sa) + " and " +
                          shape_str(sb));
  };
  if (sa.size() < 2 || sa.size() != sb.size()) throw mismatch();
  const std::size_t rank = sa.size();
  for (std::size_t i = 0; i + 1 < rank; ++i) {
    if (sa[i] != sb[i]) throw mismatch();
  }
  const std::size_t p = sa[rank - 2], q = sa[rank - 1], r = sb[rank - 1];
  const std::size_t batch = p * q == 0 ? 0 : a.numel() / (p * q);

  Shape so = sa;
  so[rank - 2] = q;
  so[rank - 1] = r;
  std::vector<double> out(batch * q * r, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    gemm_tn(ad + n * p * q, bd + n * p * r, out.data() + n * q * r, p, q, r);
  }
  return make_result("matmul_tn", std::move(so), std::move(out), {a, b},
                     [batch, p, q, r](Node& self) {
                       const double* g = self.grad.data();
                       const Node& an = *self.inputs[0];
                       const Node& bn = *self.inputs[1];
                       // dA = B G^T, dB = A G
                       if (auto* ga = input_grad(self, 0)) {
                         for (std::size_t n = 0; n < batch; ++n) {
                           gemm_nt(bn.data.data() + n * p * r, g + n * q * r,
                                   ga->data() + n * p * q, p, q, r);
                         }
                       }
                       if (auto* gb = input_grad(self, 1)) {
                         for (std::size_t n = 0; n < batch; ++n) {
                           gemm_nn(an.data.data() + n * p * q, g + n * q * r,
                                   gb->data() + n * p * r, p, q, r);
                         }
                       }
                     });
}

Tensor permute_axes(const Tensor& x, std::span<const std::size_t> perm) {
  const Shape& sx = x.shape();
  const std::size_t rank = sx.size();
  if (perm.size() != rank) throw DimensionError("permute_axes: rank mismatch for " + shape_str(sx));
  std::vector<bool> used(rank, false);
  for (auto p : perm) {
    if (p >= rank || used[p]) throw ValidationError("permute_axes: invalid axis order");
    used[p] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * sx[i];
  Shape so(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    so[i] = sx[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  // map[o] = flat input index for output o
  const std::size_t n = x.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    (*map)[o] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++counter[ax] < so[ax]) {
        src += stride[ax];
        break;
      }
      src -= stride[ax] * (so[ax] - 1);
      counter[ax] = 0;
    }
  }
  auto in = x.data();
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = in[(*map)[o]];
  return make_result("permute_axes", std::move(so), std::move(out), {x}, [map](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < map->size(); ++o) (*gx)[(*map)[o]] += self.grad[o];
  });
}

Tensor transpose(const Tensor& x) {
  const std::size_t rank = x.rank();
  if (rank < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> perm(rank);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[rank - 1], perm[rank - 2]);
  return permute_axes(x, perm);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("reshape: zero extent in " + shape_str(shape));
  }
  auto in = x.data();
  return make_result("reshape", std::move(shape), std::vector<double>(in.begin(), in.end()), {x},
                     [](Node& self) {
                       auto* gx = input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
                     });
}

Tensor relu(const Tensor& x) {
  Tensor out = unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; });
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      auto* gx = input_grad(self, 0);
      if (!gx) return;
      const auto& in = self.inputs[0]->data;
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] > 0.0) (*gx)[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out = unary("exp", x, [](double v) { return std::exp(v); });
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      auto* gx = input_grad(self, 0);
      if (!gx) return;
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i] * self.data[i];
    };
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = unary("scale", x, [factor](double v) { return v * factor; });
  if (out.requires_grad()) {
    out.node()->backward = [factor](Node& self) {
      auto* gx = input_grad(self, 0);
      if (!gx) return;
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i] * factor;
    };
  }
  return out;
}

Tensor add_scalar(const Tensor& x, double value) {
  Tensor out = unary("add_scalar", x, [value](double v) { return v + value; });
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      auto* gx = input_grad(self, 0);
      if (!gx) return;
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    };
  }
  return out;
}

Tensor reciprocal(const Tensor& x, double floor) {
  for (double v : x.data()) {
    if (!(std::abs(v) >= floor)) {
      throw NumericGuardError("reciprocal: |x| = " + std::to_string(std::abs(v)) +
                              " is below the floor " + std::to_string(floor));
    }
  }
  Tensor out = unary("reciprocal", x, [](double v) { return 1.0 / v; });
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      auto* gx = input_grad(self, 0);
      if (!gx) return;
      for (std::size_t i = 0; i < gx->size(); ++i) {
        (*gx)[i] -= self.grad[i] * self.data[i] * self.data[i];
      }
    };
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i];
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x[i];
    }
  });
}

Tensor sum_over_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const Shape& sx = x.shape();
  if (axis >= sx.size()) {
    throw DimensionError("sum_over_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(sx));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sx[i];
  for (std::size_t i = axis + 1; i < sx.size(); ++i) inner *= sx[i];
  const std::size_t n = sx[axis];

  Shape so;
  for (std::size_t i = 0; i < sx.size(); ++i) {
    if (i != axis) so.push_back(sx[i]);
    else if (keepdim) so.push_back(1);
  }
  if (so.empty()) so.push_back(1);

  auto in = x.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const double* src = in.data() + (o * n + k) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return make_result("sum_over_axis", std::move(so), std::move(out), {x},
                     [outer, n, inner](Node& self) {
                       auto* gx = input_grad(self, 0);
                       if (!gx) return;
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t k = 0; k < n; ++k) {
                           for (std::size_t i = 0; i < inner; ++i) {
                             (*gx)[(o * n + k) * inner + i] += self.grad[o * inner + i];
                           }
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  auto in = x.data();
  double s = 0.0;
  for (double v : in) s += v;
  return make_result("sum", {1}, {s}, {x}, [](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    for (auto& g : *gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor softmax_last_dim(const Tensor& x) {
  const std::size_t m = x.shape().back();
  const std::size_t rows = x.numel() / m;
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * m;
    double* dst = out.data() + r * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) mx = std::max(mx, src[i]);
    if (!std::isfinite(mx)) {
      throw NumericGuardError("softmax_last_dim: row " + std::to_string(r) +
                              " has no finite entry");
    }
    double z = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      dst[i] = std::exp(src[i] - mx);
      z += dst[i];
    }
    for (std::size_t i = 0; i < m; ++i) dst[i] /= z;
  }
  return make_result("softmax_last_dim", x.shape(), std::move(out), {x}, [rows, m](Node& self) {
    auto* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * m;
      const double* g = self.grad.data() + r * m;
      double dot = 0.0;
      for (std::size_t i = 0; i < m; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < m; ++i) (*gx)[r * m + i] += y[i] * (g[i] - dot);
    }
  });
}

Tensor mul_rows(const Tensor& x, const Tensor& s) {
  const std::size_t m = x.shape().back();
  const std::size_t rows = x.numel() / m;
  if (s.numel() != rows) {
    throw DimensionError("mul_rows: scale " + shape_str(s.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  auto xd = x.data(), sd = s.data();
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < m; ++i) out[r * m + i] = xd[r * m + i] * sd[r];
  }
  return make_result("mul_rows", x.shape(), std::move(out), {x, s}, [rows, m](Node& self) {
    const auto& xv = self.inputs[0]->data;
    const auto& sv = self.inputs[1]->data;
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < m; ++i) (*gx)[r * m + i] += self.grad[r * m + i] * sv[r];
      }
    }
    if (auto* gs = input_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += self.grad[r * m + i] * xv[r * m + i];
        (*gs)[r] += acc;
      }
    }
  });
}

Tensor gather_last_dim(const Tensor& x, std::span<const std::uint32_t> idx) {
  const std::size_t m = x.shape().back();
  if (idx.size() != m) {
    throw DimensionError("gather_last_dim: index length " + std::to_string(idx.size()) +
                         " does not match last extent of " + shape_str(x.shape()));
  }
  if (!is_permutation(idx)) throw ValidationError("gather_last_dim: index array is not a permutation");
  const std::size_t rows = x.numel() / m;
  std::vector<std::uint32_t> full(x.numel());
  for (std::size_t r = 0; r < rows; ++r) std::copy(idx.begin(), idx.end(), full.begin() + r * m);
  return gather_rows(x, full, false);
}

Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> idx, bool validate) {
  const std::size_t m = x.shape().back();
  const std::size_t rows = x.numel() / m;
  if (idx.size() != x.numel()) {
    throw DimensionError("gather_rows: expected " + std::to_string(x.numel()) +
                         " indices for " + shape_str(x.shape()));
  }
  if (validate) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (!is_permutation(idx.subspan(r * m, m))) {
        throw ValidationError("gather_rows: row " + std::to_string(r) + " is not a permutation");
      }
    }
  }
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * m;
    const std::uint32_t* ix = idx.data() + r * m;
    double* dst = out.data() + r * m;
    for (std::size_t i = 0; i < m; ++i) dst[i] = src[ix[i]];
  }
  Tensor result = make_result("gather_rows", x.shape(), std::move(out), {x}, nullptr);
  if (result.requires_grad()) {
    auto saved = std::make_shared<std::vector<std::uint32_t>>(idx.begin(), idx.end());
    result.node()->backward = [saved, rows, m](Node& self) {
      auto* gx = input_grad(self, 0);
      if (!gx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < m; ++i) {
          (*gx)[r * m + (*saved)[r * m + i]] += self.grad[r * m + i];
        }
      }
    };
  }
  return result;
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be [V, D], got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  auto td = table.data();
  std::vector<double> out(ids.size() * width);
  for (std::size_t n = 0; n < ids.size(); ++n) {
    if (ids[n] >= vocab) throw ValidationError("embedding: id " + std::to_string(ids[n]) + " >= vocab");
    std::copy_n(td.begin() + ids[n] * width, width, out.begin() + n * width);
  }
  auto saved = std::make_shared<std::vector<std::size_t>>(ids.begin(), ids.end());
  return make_result("embedding", {ids.size(), width}, std::move(out), {table},
                     [saved, width](Node& self) {
                       auto* gt = input_grad(self, 0);
                       if (!gt) return;
                       for (std::size_t n = 0; n < saved->size(); ++n) {
                         for (std::size_t i = 0; i < width; ++i) {
                           (*gt)[(*saved)[n] * width + i] += self.grad[n * width + i];
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  auto ld = logits.data();
  auto probs = std::make_shared<std::vector<double>>(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= c) throw ValidationError("cross_entropy: target class out of range");
    const double* row = ld.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      (*probs)[i * c + j] = std::exp(row[j] - mx);
      z += (*probs)[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] /= z;
    loss += (mx + std::log(z)) - row[targets[i]];
  }
  loss /= static_cast<double>(n);
  auto tg = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  return make_result("cross_entropy", {1}, {loss}, {logits}, [probs, tg, n, c](Node& self) {
    auto* gl = input_grad(self, 0);
    if (!gl) return;
    const double g = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double onehot = (j == (*tg)[i]) ? 1.0 : 0.0;
        (*gl)[i * c + j] += g * ((*probs)[i * c + j] - onehot);
      }
    }
  });
}

}  // namespace permattn::ops
