#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "permattn/tensor.hpp"

namespace permattn {

enum class ModelKind { Softmax, Performer, PermuteFormer };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

namespace probe {

enum class TaskKind {
  // target_i = x_{i-k}; the first k positions get the null class.
  OffsetCopy,
  // target_i compares x_i with x_{i-k}: less / equal / greater.
  RelativeCompare,
};

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

inline constexpr std::size_t kNullClass = 0;

struct ProbeTask {
  TaskKind kind = TaskKind::OffsetCopy;
  std::size_t length = 32;
  std::size_t vocab = 16;
  std::size_t offset = 3;  // k
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t num_classes() const;
};

struct Batch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::size_t> inputs;   // [batch * length] token ids
  std::vector<std::size_t> targets;  // [batch * length] class ids
};

// Uniform random tokens; deterministic per (task.seed, step).
Batch generate_batch(const ProbeTask& task, std::size_t batch, std::uint64_t step);

// Defaults of the reference probe run.
inline constexpr double kDefaultLearningRate = 1e-3;
inline constexpr std::uint64_t kDefaultSeed = 1;

struct ProbeConfig {
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t feature_dim = 32;
  std::size_t batch = 32;
  double r_min = 0.88;
  double r_max = 0.99;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t log_every = 100;
  std::size_t eval_batch = 256;
};

struct CurvePoint {
  long step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainState {
  ModelKind model = ModelKind::PermuteFormer;
  std::map<std::string, Tensor> parameters;
  long step = 0;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  std::vector<double> loss_history;  // every step
  std::vector<CurvePoint> curve;     // every log_every steps
  double initial_accuracy = 0.0;     // held-out batch before training
  double final_accuracy = 0.0;       // held-out batch after training
};

// Accuracy over non-null positions of a batch.
double accuracy(const Tensor& logits, const Batch& batch);

// Adam on cross-entropy. Causal single-layer model: embedding, one attention
// block (Performer without position information, or PermuteFormer), output
// projection with residual, linear classifier. Throws TrainingError on a
// non-finite loss.
TrainState train(ModelKind model, const ProbeTask& task, long steps, double lr,
                 const ProbeConfig& cfg = {});

// Accuracy of trained parameters on a fresh batch drawn after all training
// steps.
double evaluate(const TrainState& state, const ProbeTask& task, const ProbeConfig& cfg = {});

// step,loss,accuracy rows prefixed by a model column.
void write_curves_csv(std::ostream& os, const std::vector<TrainState>& runs);

}  // namespace probe
}  // namespace permattn
