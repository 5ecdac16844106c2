#include "permattn/probe.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>

#include "permattn/attention.hpp"
#include "permattn/errors.hpp"
#include "permattn/ops.hpp"

namespace permattn {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Softmax: return "softmax";
    case ModelKind::Performer: return "performer";
    case ModelKind::PermuteFormer: return "permuteformer";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "softmax") return ModelKind::Softmax;
  if (name == "performer") return ModelKind::Performer;
  if (name == "permuteformer") return ModelKind::PermuteFormer;
  throw UsageError("unknown model '" + name + "' (expected softmax, performer or permuteformer)");
}

namespace probe {

std::string to_string(TaskKind kind) {
  return kind == TaskKind::OffsetCopy ? "offset-copy" : "relative-compare";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "offset-copy") return TaskKind::OffsetCopy;
  if (name == "relative-compare") return TaskKind::RelativeCompare;
  throw UsageError("unknown task '" + name + "' (expected offset-copy or relative-compare)");
}

void ProbeTask::validate() const {
  if (offset < 1 || offset >= length) {
    throw UsageError("probe task: offset k must satisfy 1 <= k < L (k = " +
                     std::to_string(offset) + ", L = " + std::to_string(length) + ")");
  }
  if (vocab < 2) throw UsageError("probe task: vocab must be at least 2");
}

std::size_t ProbeTask::num_classes() const {
  return kind == TaskKind::OffsetCopy ? vocab + 1 : 4;
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Batch generate_batch(const ProbeTask& task, std::size_t batch, std::uint64_t step) {
  task.validate();
  Batch b;
  b.batch = batch;
  b.length = task.length;
  b.inputs.resize(batch * task.length);
  b.targets.resize(batch * task.length);
  std::mt19937_64 gen(mix(mix(task.seed) ^ step));
  std::uniform_int_distribution<std::size_t> tok(0, task.vocab - 1);
  for (auto& t : b.inputs) t = tok(gen);
  const std::size_t k = task.offset;
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t* x = b.inputs.data() + s * task.length;
    std::size_t* y = b.targets.data() + s * task.length;
    for (std::size_t i = 0; i < task.length; ++i) {
      if (i < k) {
        y[i] = kNullClass;
      } else if (task.kind == TaskKind::OffsetCopy) {
        y[i] = x[i - k] + 1;
      } else {
        y[i] = x[i] < x[i - k] ? 1 : (x[i] == x[i - k] ? 2 : 3);
      }
    }
  }
  return b;
}

double accuracy(const Tensor& logits, const Batch& batch) {
  const std::size_t classes = logits.dim(1);
  auto ld = logits.data();
  std::size_t hit = 0, total = 0;
  for (std::size_t n = 0; n < batch.targets.size(); ++n) {
    if (batch.targets[n] == kNullClass) continue;
    const double* row = ld.data() + n * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    hit += best == batch.targets[n];
    ++total;
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

namespace {

struct Model {
  ModelKind kind;
  std::size_t heads;
  std::map<std::string, Tensor> params;
  AttentionConfig attn;

  Model(ModelKind k, const ProbeTask& task, const ProbeConfig& cfg) : kind(k), heads(cfg.heads) {
    if (k == ModelKind::Softmax) throw UsageError("probe: softmax model is not part of the probe");
    if (cfg.d_model % cfg.heads != 0) throw UsageError("probe: d_model must split over heads");
    const std::size_t D = cfg.d_model, dh = D / cfg.heads, C = task.num_classes();
    const std::uint64_t s = task.seed * 1000;
    const double sd = 1.0 / std::sqrt(static_cast<double>(D));
    params["embed"] = Tensor::randn({task.vocab, D}, s + 1, 1.0, true);
    params["w_q"] = Tensor::randn({D, D}, s + 2, sd, true);
    params["w_k"] = Tensor::randn({D, D}, s + 3, sd, true);
    params["w_v"] = Tensor::randn({D, D}, s + 4, sd, true);
    params["w_o"] = Tensor::randn({D, D}, s + 5, sd, true);
    params["lift"] = Tensor::randn({dh, cfg.feature_dim}, s + 6,
                                   1.0 / std::sqrt(static_cast<double>(dh)), true);
    params["classifier"] = Tensor::randn({D, C}, s + 7, sd, true);
    if (k == ModelKind::PermuteFormer) {
      attn = AttentionConfig::make(task.length, cfg.heads, dh, true, cfg.r_min, cfg.r_max, s + 8,
                                   kDefaultEpsilon, cfg.feature_dim);
    }
  }

  Tensor logits(const Batch& b) const {
    const std::size_t D = params.at("embed").dim(1);
    Tensor h = ops::embedding(params.at("embed"), b.inputs);  // [B*L, D]
    Tensor h3 = ops::reshape(h, {b.batch, b.length, D});
    ProjectionWeights w{params.at("w_q"), params.at("w_k"), params.at("w_v")};
    const std::size_t dh = D / heads;
    FeatureMap fmap(FeatureMapConfig{kDefaultEpsilon, dh, params.at("lift").dim(1)},
                    params.at("lift"));
    Tensor a = kind == ModelKind::PermuteFormer ? permuteformer_attention(h3, w, fmap, attn)
                                                : performer_attention(h3, w, fmap, heads, true);
    Tensor a2 = ops::reshape(a, {b.batch * b.length, D});
    Tensor y = ops::add(h, ops::matmul(a2, params.at("w_o")));
    return ops::matmul(y, params.at("classifier"));
  }
};

Model rebuild(const TrainState& state, const ProbeTask& task, const ProbeConfig& cfg) {
  Model m(state.model, task, cfg);
  for (auto& [name, t] : m.params) t.assign(state.parameters.at(name).data());
  return m;
}

double held_out_accuracy(const Model& model, const ProbeTask& task, const ProbeConfig& cfg,
                         std::uint64_t stream) {
  const Batch b = generate_batch(task, cfg.eval_batch, stream);
  return accuracy(model.logits(b), b);
}

constexpr std::uint64_t kEvalStream = 0xE7A1ULL << 40;

}  // namespace

TrainState train(ModelKind kind, const ProbeTask& task, long steps, double lr,
                 const ProbeConfig& cfg) {
  task.validate();
  if (steps < 1) throw UsageError("train: steps must be >= 1");
  if (!(lr >= 0.0)) throw UsageError("train: learning rate must be non-negative");

  Model model(kind, task, cfg);
  TrainState state;
  state.model = kind;
  state.seed = task.seed;
  state.learning_rate = lr;
  state.initial_accuracy = held_out_accuracy(model, task, cfg, kEvalStream);

  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> moments;
  for (const auto& [name, t] : model.params) {
    moments[name] = {std::vector<double>(t.numel(), 0.0), std::vector<double>(t.numel(), 0.0)};
  }

  for (long step = 1; step <= steps; ++step) {
    const Batch b = generate_batch(task, cfg.batch, static_cast<std::uint64_t>(step));
    for (auto& [name, t] : model.params) t.zero_grad();
    Tensor logits;
    try {
      logits = model.logits(b);
    } catch (const NumericGuardError& e) {
      throw TrainingError("training diverged at step " + std::to_string(step) + ": " + e.what(),
                          step);
    }
    Tensor loss = ops::cross_entropy(logits, b.targets);
    const double lv = loss.item();
    if (!std::isfinite(lv)) {
      throw TrainingError("training diverged: loss is " + std::to_string(lv) + " at step " +
                              std::to_string(step),
                          step);
    }
    loss.backward();
    state.loss_history.push_back(lv);
    if (step % static_cast<long>(cfg.log_every) == 0 || step == steps) {
      state.curve.push_back({step, lv, accuracy(logits, b)});
    }

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (auto& [name, t] : model.params) {
      if (!t.has_grad() || lr == 0.0) continue;
      auto g = t.grad();
      auto& mo = moments[name];
      std::vector<double> values(t.data().begin(), t.data().end());
      for (std::size_t i = 0; i < values.size(); ++i) {
        mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * g[i];
        mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = mo.m[i] / bc1;
        const double vhat = mo.v[i] / bc2;
        values[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      }
      t.assign(values);
    }
    state.step = step;
  }

  for (const auto& [name, t] : model.params) state.parameters[name] = t.detach();
  state.final_accuracy = held_out_accuracy(model, task, cfg, kEvalStream + 1);
  return state;
}

double evaluate(const TrainState& state, const ProbeTask& task, const ProbeConfig& cfg) {
  const Model model = rebuild(state, task, cfg);
  return held_out_accuracy(model, task, cfg, kEvalStream + 2);
}

void write_curves_csv(std::ostream& os, const std::vector<TrainState>& runs) {
  os << "model,step,loss,accuracy\n";
  for (const auto& run : runs) {
    for (const auto& p : run.curve) {
      os << permattn::to_string(run.model) << ',' << p.step << ',' << std::setprecision(10)
         << p.loss << ',' << p.accuracy << '\n';
    }
  }
}

}  // namespace probe
}  // namespace permattn
