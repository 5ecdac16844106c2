#include "permattn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <ostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "permattn/attention.hpp"
#include "permattn/errors.hpp"

namespace permattn {

void BenchOptions::validate() const {
  if (lengths.empty()) throw UsageError("bench: need at least one length");
  if (!std::is_sorted(lengths.begin(), lengths.end())) {
    throw UsageError("bench: lengths must be sorted ascending");
  }
  for (auto l : lengths) {
    if (l == 0) throw UsageError("bench: lengths must be positive");
  }
  if (models.empty()) throw UsageError("bench: need at least one model");
  if (repeats < 5) throw UsageError("bench: repeats must be >= 5");
  if (heads == 0 || d_head == 0) throw UsageError("bench: H and d_head must be positive");
}

namespace {

struct Cell {
  Tensor q, k, v;
};

// Large tensors would otherwise be mmapped and released on every run, so each
// run would pay for faulting in fresh pages. Keep freed blocks in the heap.
void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<BenchRecord> run_bench(const BenchOptions& opts,
                                   const std::function<void(const BenchRecord&)>& on_record) {
  opts.validate();
  retain_freed_memory();
  const std::size_t m = opts.feature_dim ? opts.feature_dim : 4 * opts.d_head;
  const FeatureMap fmap(FeatureMapConfig{kDefaultEpsilon, opts.d_head, m}, opts.seed + 17);
  const auto heads = assign_head_params(opts.heads, m, 1.0, 1.0, opts.seed + 31, false);

  std::vector<BenchRecord> out;
  for (std::size_t length : opts.lengths) {
    const Shape s{opts.heads, length, opts.d_head};
    const double sd = 1.0 / std::sqrt(std::sqrt(static_cast<double>(opts.d_head)));
    Cell cell{Tensor::randn(s, opts.seed + length * 3, sd), Tensor::randn(s, opts.seed + length * 3 + 1, sd),
              Tensor::randn(s, opts.seed + length * 3 + 2)};

    std::vector<std::function<Tensor()>> forwards;
    for (ModelKind model : opts.models) {
      switch (model) {
        case ModelKind::Softmax:
          forwards.push_back([&] { return softmax_attention(cell.q, cell.k, cell.v, false, false).out; });
          break;
        case ModelKind::Performer:
          forwards.push_back([&] { return kernel_attention_linear(fmap(cell.q), fmap(cell.k), cell.v); });
          break;
        case ModelKind::PermuteFormer:
          forwards.push_back([&] {
            return kernel_attention_linear(fmap.encoded(cell.q, heads, Side::Query),
                                           fmap.encoded(cell.k, heads, Side::Key), cell.v);
          });
          break;
      }
    }
    // Repeats alternate between models so drift in machine speed hits all of
    // them alike.
    for (std::size_t w = 0; w < opts.warmup; ++w) {
      for (auto& f : forwards) f();
    }
    std::vector<std::vector<double>> times(forwards.size());
    for (std::size_t r = 0; r < opts.repeats; ++r) {
      for (std::size_t i = 0; i < forwards.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Tensor result = forwards[i]();
        times[i].push_back(elapsed_ms(t0));
      }
    }
    for (std::size_t i = 0; i < forwards.size(); ++i) {
      auto& ts = times[i];
      BenchRecord rec;
      rec.model = opts.models[i];
      rec.length = length;
      rec.heads = opts.heads;
      rec.d_head = opts.d_head;
      rec.feature_dim = m;
      rec.repeats = opts.repeats;
      double sum = 0.0;
      for (double t : ts) sum += t;
      rec.mean_ms = sum / static_cast<double>(ts.size());
      double ss = 0.0;
      for (double t : ts) ss += (t - rec.mean_ms) * (t - rec.mean_ms);
      rec.std_ms = std::sqrt(ss / static_cast<double>(ts.size() - 1));
      std::sort(ts.begin(), ts.end());
      const std::size_t mid = ts.size() / 2;
      rec.median_ms = ts.size() % 2 ? ts[mid] : 0.5 * (ts[mid - 1] + ts[mid]);
      if (on_record) on_record(rec);
      out.push_back(rec);
    }
  }
  return out;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records,
                     std::uint64_t seed) {
  os << "# version=" << kVersion << " seed=" << seed << " workers=" << kBenchWorkers << '\n';
  os << "model,L,H,d_head,m,repeats,mean_ms,std_ms\n";
  for (const auto& r : records) {
    os << to_string(r.model) << ',' << r.length << ',' << r.heads << ',' << r.d_head << ','
       << r.feature_dim << ',' << r.repeats << ',' << std::fixed << std::setprecision(4)
       << r.mean_ms << ',' << r.std_ms << std::defaultfloat << '\n';
  }
}

OrderStats order_stats(std::size_t m, std::size_t samples, std::uint64_t seed, std::size_t heads) {
  if (samples == 0) throw UsageError("order-stats: samples must be >= 1");
  if (m == 0) throw UsageError("order-stats: m must be >= 1");
  OrderStats st;
  st.m = m;
  st.samples = samples;
  std::vector<BigInt> orders;
  orders.reserve(samples);
  BigInt total = 0;
  std::mt19937_64 gen(seed);
  for (std::size_t s = 0; s < samples; ++s) {
    orders.push_back(sample_permutation(m, gen).order());
    total += orders.back();
  }
  st.mean = static_cast<double>(total) / static_cast<double>(samples);
  std::sort(orders.begin(), orders.end());
  st.median = orders[(samples - 1) / 2];
  st.max = orders.back();

  st.head_lcm = 1;
  for (std::size_t h = 0; h < heads; ++h) {
    st.head_orders.push_back(sample_permutation(m, gen).order());
    st.head_lcm = lcm(st.head_lcm, st.head_orders.back());
  }
  return st;
}

void write_order_stats(std::ostream& os, const OrderStats& st) {
  os << "m: " << st.m << '\n'
     << "samples: " << st.samples << '\n'
     << "mean order: " << std::fixed << std::setprecision(2) << st.mean << std::defaultfloat << '\n'
     << "median order: " << st.median << '\n'
     << "max order: " << st.max << '\n'
     << "head orders (" << st.head_orders.size() << " heads):";
  for (const auto& o : st.head_orders) os << ' ' << o;
  os << '\n' << "lcm across heads: " << st.head_lcm << '\n';
}

}  // namespace permattn
