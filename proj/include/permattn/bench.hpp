#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "permattn/permutation.hpp"
#include "permattn/probe.hpp"

namespace permattn {

inline constexpr const char* kVersion = "0.1.0";

struct BenchRecord {
  ModelKind model = ModelKind::Performer;
  std::size_t length = 0;
  std::size_t heads = 0;
  std::size_t d_head = 0;
  std::size_t feature_dim = 0;
  std::size_t repeats = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;     // sample stddev over the timed (warm) runs
  double median_ms = 0.0;
};

struct BenchOptions {
  std::vector<std::size_t> lengths;
  std::vector<ModelKind> models;
  std::size_t repeats = 10;
  std::size_t warmup = 2;
  std::size_t heads = 8;
  std::size_t d_head = 64;
  std::size_t feature_dim = 0;  // 0 -> 4 * d_head
  std::uint64_t seed = 0;

  void validate() const;
};

// Times one attention forward pass per run: q, k, v ([H, L, d_head]) are
// drawn once per length and the feature map is built before timing. Only the
// attention computation from q, k, v onward is inside the clock. Within a
// length, repeats cycle through the models. Single-threaded.
std::vector<BenchRecord> run_bench(const BenchOptions& opts,
                                   const std::function<void(const BenchRecord&)>& on_record = {});

inline constexpr std::size_t kBenchWorkers = 1;

// "# version=... seed=... workers=..." then
// model,L,H,d_head,m,repeats,mean_ms,std_ms
void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records,
                     std::uint64_t seed);

struct OrderStats {
  std::size_t m = 0;
  std::size_t samples = 0;
  double mean = 0.0;
  BigInt median;
  BigInt max;
  std::vector<BigInt> head_orders;  // one simulated multi-head draw
  BigInt head_lcm;                  // longest encodable distance across heads
};

OrderStats order_stats(std::size_t m, std::size_t samples, std::uint64_t seed,
                       std::size_t heads = 12);

void write_order_stats(std::ostream& os, const OrderStats& stats);

}  // namespace permattn
