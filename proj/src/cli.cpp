#include "permattn/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>

#include "permattn/bench.hpp"
#include "permattn/errors.hpp"
#include "permattn/probe.hpp"
#include "permattn/suite.hpp"

namespace permattn {

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct VerifyArgs {
  std::string config;
  std::string out;
};

struct BenchArgs {
  std::vector<std::size_t> lengths{512, 1024, 2048, 4096};
  std::vector<std::string> models{"softmax", "performer", "permuteformer"};
  std::size_t repeats = 10;
  std::size_t warmup = 2;
  std::size_t heads = 8;
  std::size_t d_head = 64;
  std::size_t m = 0;
  std::string out;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct OrderArgs {
  std::size_t m = 64;
  std::size_t samples = 10000;
  std::size_t heads = 12;
  std::uint64_t seed = 0;
};

struct ProbeArgs {
  std::string task = "offset-copy";
  std::size_t length = 32;
  std::size_t offset = 3;
  std::size_t vocab = 16;
  long steps = 2000;
  double lr = probe::kDefaultLearningRate;
  std::uint64_t seed = probe::kDefaultSeed;
  std::string out;
};

// Opens the output up front so an unwritable path fails before any work.
std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw UsageError("cannot write '" + path + "'");
  return f;
}

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
  const SuiteConfig cfg = a.config.empty() ? SuiteConfig{} : load_config(a.config);
  std::ofstream csv;
  if (!a.out.empty()) csv = open_out(a.out);
  const verify::Report rep = run_suite(cfg);
  out << "verify: L=" << cfg.length << " H=" << cfg.heads << " d_head=" << cfg.d_head
      << " m=" << cfg.m() << (cfg.causal ? " causal" : " bidirectional") << " r=["
      << cfg.decay_min() << ", " << cfg.decay_max() << "] seed=" << cfg.seed << "\n\n";
  rep.write_table(out);
  if (csv.is_open()) rep.write_csv(csv);
  out << '\n' << rep.results().size() - rep.failures() << '/' << rep.results().size()
      << " checks passed\n";
  return rep.all_passed() ? kOk : kFailed;
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  BenchOptions opts;
  opts.lengths = a.lengths;
  for (const auto& name : a.models) opts.models.push_back(parse_model_kind(name));
  opts.repeats = a.repeats;
  opts.warmup = a.warmup;
  opts.heads = a.heads;
  opts.d_head = a.d_head;
  opts.feature_dim = a.m;
  opts.seed = a.seed;
  opts.validate();
  std::ofstream csv;
  if (!a.out.empty()) csv = open_out(a.out);

  const auto records = run_bench(opts, [&](const BenchRecord& r) {
    out << std::left << std::setw(14) << to_string(r.model) << std::right << " L=" << std::setw(5)
        << r.length << "  mean " << std::fixed << std::setprecision(3) << std::setw(10)
        << r.mean_ms << " ms  std " << std::setw(8) << r.std_ms;
    if (a.verbose) out << "  median " << std::setw(10) << r.median_ms;
    out << std::defaultfloat << '\n';
  });
  if (csv.is_open()) {
    write_bench_csv(csv, records, a.seed);
  } else {
    write_bench_csv(out, records, a.seed);
  }
  return kOk;
}

int cmd_order_stats(const OrderArgs& a, std::ostream& out) {
  write_order_stats(out, order_stats(a.m, a.samples, a.seed, a.heads));
  return kOk;
}

int cmd_probe(const ProbeArgs& a, std::ostream& out, std::ostream& err) {
  probe::ProbeTask task;
  task.kind = probe::parse_task_kind(a.task);
  task.length = a.length;
  task.offset = a.offset;
  task.vocab = a.vocab;
  task.seed = a.seed;
  task.validate();
  std::ofstream csv;
  if (!a.out.empty()) csv = open_out(a.out);

  std::vector<probe::TrainState> runs;
  for (ModelKind kind : {ModelKind::PermuteFormer, ModelKind::Performer}) {
    try {
      runs.push_back(probe::train(kind, task, a.steps, a.lr));
    } catch (const TrainingError& e) {
      err << "probe: " << to_string(kind) << ": " << e.what() << '\n';
      return kFailed;
    }
    const auto& r = runs.back();
    out << std::left << std::setw(14) << to_string(kind) << std::right << std::fixed
        << std::setprecision(4) << " final loss " << r.loss_history.back() << "  train acc "
        << r.curve.back().accuracy << "  held-out acc " << r.final_accuracy << std::defaultfloat
        << '\n';
  }
  if (csv.is_open()) {
    probe::write_curves_csv(csv, runs);
  }
  return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Permutation-based relative position encoding for linear attention"};
  app.name("permattn");
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run the invariant suite; exit 0 iff all checks pass");
  verify->add_option("--config", va.config, "key=value config file (defaults when omitted)");
  verify->add_option("--out", va.out, "Also write results as CSV");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time attention forward passes across lengths");
  bench->add_option("--lengths", ba.lengths, "Comma-separated sequence lengths, ascending")
      ->delimiter(',');
  bench->add_option("--models", ba.models, "Comma-separated: softmax, performer, permuteformer")
      ->delimiter(',');
  bench->add_option("--repeats", ba.repeats, "Timed runs per cell (>= 5)");
  bench->add_option("--warmup", ba.warmup, "Untimed runs per cell")->check(CLI::Range(2, 1000));
  bench->add_option("--heads", ba.heads, "Attention heads");
  bench->add_option("--head-dim", ba.d_head, "Per-head query/key dimension");
  bench->add_option("--m", ba.m, "Feature dimension (default 4 * head-dim)");
  bench->add_option("--out", ba.out, "CSV output path (stdout when omitted)");
  bench->add_option("--seed", ba.seed, "Seed");
  bench->add_flag("--verbose", ba.verbose, "Also print medians");

  OrderArgs oa;
  auto* order = app.add_subcommand("order-stats", "Order statistics of uniform random permutations");
  order->add_option("--m,--head-dim", oa.m, "Permutation size");
  order->add_option("--samples", oa.samples, "Sampled permutations");
  order->add_option("--heads", oa.heads, "Heads in the simulated multi-head draw");
  order->add_option("--seed", oa.seed, "Seed");

  ProbeArgs pa;
  auto* probe_cmd = app.add_subcommand("probe", "Train PermuteFormer and Performer on a synthetic task");
  probe_cmd->add_option("--task", pa.task, "offset-copy or relative-compare");
  probe_cmd->add_option("--length", pa.length, "Sequence length L");
  probe_cmd->add_option("--offset", pa.offset, "Offset k, 1 <= k < L");
  probe_cmd->add_option("--vocab", pa.vocab, "Token vocabulary size");
  probe_cmd->add_option("--steps", pa.steps, "Training steps");
  probe_cmd->add_option("--lr", pa.lr, "Adam learning rate");
  probe_cmd->add_option("--seed", pa.seed, "Seed");
  probe_cmd->add_option("--out", pa.out, "Curves CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (*verify) return cmd_verify(va, out);
    if (*bench) return cmd_bench(ba, out);
    if (*order) return cmd_order_stats(oa, out);
    return cmd_probe(pa, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kUsage;
}

}  // namespace permattn
