#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "permattn/attention.hpp"
#include "permattn/bench.hpp"
#include "permattn/config.hpp"
#include "permattn/errors.hpp"
#include "permattn/probe.hpp"
#include "permattn/suite.hpp"

namespace py = pybind11;
using namespace permattn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::int_ to_int(const BigInt& v) {
  return py::reinterpret_steal<py::int_>(PyLong_FromString(v.str().c_str(), nullptr, 10));
}

Side parse_side(const std::string& s) {
  if (s == "query") return Side::Query;
  if (s == "key") return Side::Key;
  throw UsageError("side must be 'query' or 'key', got '" + s + "'");
}

std::vector<HeadEncoding> make_heads(const std::vector<std::vector<Index>>& perms,
                                     const std::vector<double>& decay, bool causal) {
  if (!decay.empty() && decay.size() != perms.size()) {
    throw UsageError("need one decay per permutation");
  }
  std::vector<HeadEncoding> heads;
  for (std::size_t h = 0; h < perms.size(); ++h) {
    heads.emplace_back(PermutationSpec(perms[h]), decay.empty() ? 1.0 : decay[h], h, causal);
  }
  return heads;
}

py::dict order_stats_dict(const OrderStats& st) {
  py::dict d;
  d["m"] = st.m;
  d["samples"] = st.samples;
  d["mean"] = st.mean;
  d["median"] = to_int(st.median);
  d["max"] = to_int(st.max);
  py::list orders;
  for (const auto& o : st.head_orders) orders.append(to_int(o));
  d["head_orders"] = orders;
  d["head_lcm"] = to_int(st.head_lcm);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Permutation-encoded linear attention: feature maps, encodings, attention and checks.";
  m.attr("__version__") = kVersion;

  auto base = PyExc_ValueError;
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<ValidationError>(m, "ValidationError", base);
  py::register_exception<UsageError>(m, "UsageError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<NumericGuardError>(m, "NumericGuardError", PyExc_ArithmeticError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def(
      "feature_map",
      [](const Array& x, std::size_t m_dim, double epsilon, std::uint64_t seed) {
        const std::size_t d = x.ndim() ? static_cast<std::size_t>(x.shape(x.ndim() - 1)) : 0;
        FeatureMapConfig cfg{epsilon, d, m_dim ? m_dim : 4 * d};
        return to_array(FeatureMap(cfg, seed)(to_tensor(x)));
      },
      py::arg("x"), py::arg("m") = 0, py::arg("epsilon") = kDefaultEpsilon, py::arg("seed") = 0,
      "phi(x) = max(x W, 0) + epsilon with a seeded d -> m lift (m defaults to 4d).");

  m.def(
      "sample_permutation",
      [](std::size_t m_dim, std::uint64_t seed) {
        const auto spec = sample_permutation(m_dim, seed);
        return std::vector<Index>(spec.indices().begin(), spec.indices().end());
      },
      py::arg("m"), py::arg("seed"));

  m.def(
      "permutation_order",
      [](const std::vector<Index>& pi) { return to_int(PermutationSpec(pi).order()); },
      py::arg("pi"), "Order of the permutation (lcm of its cycle lengths).");

  m.def(
      "encode",
      [](const Array& features, const std::vector<Index>& pi, double r, const std::string& side,
         std::size_t offset, bool causal) {
        const HeadEncoding enc(PermutationSpec(pi), r, 0, causal);
        return to_array(encode(to_tensor(features), enc, parse_side(side), offset));
      },
      py::arg("features"), py::arg("pi"), py::arg("r") = 1.0, py::arg("side") = "query",
      py::arg("offset") = 0, py::arg("causal") = false,
      "Row t of [L, m] features gathered by pi^(offset + t) and scaled by r^(+-p).");

  m.def(
      "kernel_attention",
      [](const Array& qf, const Array& kf, const Array& v, bool causal, bool linear) {
        const Tensor q = to_tensor(qf), k = to_tensor(kf), vv = to_tensor(v);
        if (!linear) return to_array(kernel_attention_quadratic(q, k, vv, causal).out);
        if (!causal) return to_array(kernel_attention_linear(q, k, vv));
        return to_array(causal_linear_attention(q, k, vv, identity_heads(1, q.dim(2), true)));
      },
      py::arg("qf"), py::arg("kf"), py::arg("v"), py::arg("causal") = false,
      py::arg("linear") = true, "Kernel attention over post-feature-map [N, L, m] inputs.");

  m.def(
      "causal_linear_attention",
      [](const Array& qf, const Array& kf, const Array& v,
         const std::vector<std::vector<Index>>& perms, const std::vector<double>& decay,
         std::size_t offset) {
        const auto heads = make_heads(perms, decay, true);
        return to_array(
            causal_linear_attention(to_tensor(qf), to_tensor(kf), to_tensor(v), heads, offset));
      },
      py::arg("qf"), py::arg("kf"), py::arg("v"), py::arg("perms"),
      py::arg("decay") = std::vector<double>{}, py::arg("offset") = 0,
      "Causal recurrence; slice n uses perms[n % H] and decay[n % H].");

  m.def(
      "softmax_attention",
      [](const Array& q, const Array& k, const Array& v, bool causal) {
        return to_array(softmax_attention(to_tensor(q), to_tensor(k), to_tensor(v), causal, false).out);
      },
      py::arg("q"), py::arg("k"), py::arg("v"), py::arg("causal") = false);

  m.def(
      "permuteformer_attention",
      [](const Array& x, std::size_t heads, bool causal, double r_min, double r_max,
         std::uint64_t seed, std::size_t offset) {
        const Tensor xin = to_tensor(x);
        if (xin.rank() < 2) throw DimensionError("x must be [L, d_model] or [B, L, d_model]");
        const std::size_t L = xin.dim(xin.rank() - 2), d_model = xin.dim(xin.rank() - 1);
        if (heads == 0 || d_model % heads != 0) {
          throw DimensionError("d_model does not split into the requested heads");
        }
        if (!causal) r_min = r_max = 1.0;
        const auto cfg = AttentionConfig::make(L, heads, d_model / heads, causal, r_min, r_max, seed);
        const FeatureMap fmap(cfg.fmap, seed + 1);
        const auto w = ProjectionWeights::random(d_model, seed + 2);
        return to_array(permuteformer_attention(xin, w, fmap, cfg, offset));
      },
      py::arg("x"), py::arg("heads"), py::arg("causal") = false, py::arg("r_min") = 0.88,
      py::arg("r_max") = 0.99, py::arg("seed") = 0, py::arg("offset") = 0,
      "Full pipeline with seeded projections, feature map and per-head permutations.");

  m.def(
      "verify",
      [](const std::string& config_text) {
        std::istringstream in(config_text);
        const auto report = run_suite(parse_config(in));
        py::list rows;
        for (const auto& r : report.results()) {
          py::dict d;
          d["check"] = r.check;
          d["instance"] = r.instance;
          d["max_deviation"] = r.max_deviation;
          d["tolerance"] = r.tolerance;
          d["negative_control"] = r.negative_control;
          d["passed"] = r.passed;
          d["detail"] = r.detail;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config") = "", "Runs the invariant suite on key=value config text.");

  m.def(
      "order_stats",
      [](std::size_t m_dim, std::size_t samples, std::uint64_t seed, std::size_t heads) {
        return order_stats_dict(order_stats(m_dim, samples, seed, heads));
      },
      py::arg("m") = 64, py::arg("samples") = 10000, py::arg("seed") = 0, py::arg("heads") = 12);

  m.def(
      "bench",
      [](const std::vector<std::size_t>& lengths, const std::vector<std::string>& models,
         std::size_t repeats, std::size_t warmup, std::size_t heads, std::size_t d_head,
         std::uint64_t seed) {
        BenchOptions opts;
        opts.lengths = lengths;
        for (const auto& name : models) opts.models.push_back(parse_model_kind(name));
        opts.repeats = repeats;
        opts.warmup = warmup;
        opts.heads = heads;
        opts.d_head = d_head;
        opts.seed = seed;
        py::list rows;
        for (const auto& r : run_bench(opts)) {
          py::dict d;
          d["model"] = to_string(r.model);
          d["L"] = r.length;
          d["H"] = r.heads;
          d["d_head"] = r.d_head;
          d["m"] = r.feature_dim;
          d["repeats"] = r.repeats;
          d["mean_ms"] = r.mean_ms;
          d["std_ms"] = r.std_ms;
          d["median_ms"] = r.median_ms;
          rows.append(d);
        }
        return rows;
      },
      py::arg("lengths"), py::arg("models") = std::vector<std::string>{"performer", "permuteformer"},
      py::arg("repeats") = 10, py::arg("warmup") = 2, py::arg("heads") = 8, py::arg("d_head") = 64,
      py::arg("seed") = 0);

  m.def(
      "train_probe",
      [](const std::string& model, std::size_t offset, std::size_t length, long steps, double lr,
         std::uint64_t seed, const std::string& task) {
        probe::ProbeTask t;
        t.kind = probe::parse_task_kind(task);
        t.offset = offset;
        t.length = length;
        t.seed = seed;
        const auto st = probe::train(parse_model_kind(model), t, steps, lr);
        py::dict d;
        d["model"] = to_string(st.model);
        d["steps"] = st.step;
        d["initial_accuracy"] = st.initial_accuracy;
        d["final_accuracy"] = st.final_accuracy;
        py::list curve;
        for (const auto& p : st.curve) curve.append(py::make_tuple(p.step, p.loss, p.accuracy));
        d["curve"] = curve;
        return d;
      },
      py::arg("model"), py::arg("offset") = 3, py::arg("length") = 32, py::arg("steps") = 2000,
      py::arg("lr") = probe::kDefaultLearningRate, py::arg("seed") = probe::kDefaultSeed,
      py::arg("task") = "offset-copy",
      "Trains the single-layer probe; curve rows are (step, loss, train accuracy).");
}
