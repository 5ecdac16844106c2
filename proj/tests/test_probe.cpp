#include <gtest/gtest.h>

#include <sstream>

#include "permattn/errors.hpp"
#include "permattn/ops.hpp"
#include "permattn/probe.hpp"

using namespace permattn;
using namespace permattn::probe;

TEST(ProbeTask, OffsetCopyTargets) {
  ProbeTask task;
  task.length = 10;
  task.offset = 3;
  task.seed = 4;
  const Batch b = generate_batch(task, 5, 1);
  for (std::size_t s = 0; s < 5; ++s) {
    for (std::size_t i = 0; i < 10; ++i) {
      const std::size_t n = s * 10 + i;
      if (i < 3) {
        EXPECT_EQ(b.targets[n], kNullClass);
      } else {
        EXPECT_EQ(b.targets[n], b.inputs[n - 3] + 1);
      }
      EXPECT_LT(b.inputs[n], task.vocab);
    }
  }
}

TEST(ProbeTask, RelativeCompareTargets) {
  ProbeTask task;
  task.kind = TaskKind::RelativeCompare;
  task.length = 12;
  task.offset = 2;
  task.vocab = 3;
  const Batch b = generate_batch(task, 4, 2);
  EXPECT_EQ(task.num_classes(), 4u);
  for (std::size_t n = 0; n < b.targets.size(); ++n) {
    const std::size_t i = n % 12;
    if (i < 2) continue;
    const auto a = b.inputs[n], p = b.inputs[n - 2];
    EXPECT_EQ(b.targets[n], a < p ? 1u : (a == p ? 2u : 3u));
  }
}

TEST(ProbeTask, DeterministicAndValidated) {
  ProbeTask task;
  EXPECT_EQ(generate_batch(task, 3, 7).inputs, generate_batch(task, 3, 7).inputs);
  EXPECT_NE(generate_batch(task, 3, 7).inputs, generate_batch(task, 3, 8).inputs);
  task.offset = 0;
  EXPECT_THROW(task.validate(), UsageError);
  task.offset = task.length;
  EXPECT_THROW(task.validate(), UsageError);
  EXPECT_THROW(parse_task_kind("copy"), UsageError);
  EXPECT_THROW(parse_model_kind("rnn"), UsageError);
}

TEST(Accuracy, CountsNonNullOnly) {
  Batch b;
  b.batch = 1;
  b.length = 3;
  b.targets = {kNullClass, 2, 1};
  // predicts class 2 everywhere
  const Tensor logits = Tensor::from({3, 3}, {0, 0, 1, 0, 0, 1, 0, 0, 1});
  EXPECT_DOUBLE_EQ(accuracy(logits, b), 0.5);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  ProbeTask task;
  task.length = 8;
  task.offset = 2;
  ProbeConfig cfg;
  cfg.batch = 4;
  cfg.eval_batch = 8;
  const auto a = train(ModelKind::PermuteFormer, task, 3, 0.0, cfg);
  const auto b = train(ModelKind::PermuteFormer, task, 1, 0.0, cfg);
  for (const auto& [name, t] : a.parameters) {
    const auto u = t.data(), v = b.parameters.at(name).data();
    EXPECT_TRUE(std::equal(u.begin(), u.end(), v.begin())) << name;
  }
  EXPECT_EQ(a.loss_history.size(), 3u);
}

TEST(Train, LossDecreasesAndIsReproducible) {
  ProbeTask task;
  task.length = 12;
  task.offset = 1;
  task.seed = 3;
  ProbeConfig cfg;
  cfg.batch = 16;
  cfg.eval_batch = 32;
  cfg.log_every = 10;
  const auto a = train(ModelKind::PermuteFormer, task, 60, 1e-2, cfg);
  const auto b = train(ModelKind::PermuteFormer, task, 60, 1e-2, cfg);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_LT(a.loss_history.back(), a.loss_history.front());
  EXPECT_EQ(a.curve.size(), 6u);
  EXPECT_DOUBLE_EQ(evaluate(a, task, cfg), evaluate(b, task, cfg));
}

TEST(Train, DivergenceRaisesTrainingError) {
  ProbeTask task;
  task.length = 8;
  task.offset = 1;
  ProbeConfig cfg;
  cfg.batch = 4;
  cfg.eval_batch = 4;
  try {
    train(ModelKind::Performer, task, 5, 1e300, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.step(), 1);
  }
}

TEST(Train, SoftmaxNotAProbeModel) {
  EXPECT_THROW(train(ModelKind::Softmax, ProbeTask{}, 1, 1e-3), UsageError);
}

TEST(Curves, CsvFormat) {
  TrainState s;
  s.model = ModelKind::Performer;
  s.curve = {{100, 1.5, 0.25}};
  std::ostringstream os;
  write_curves_csv(os, {s});
  EXPECT_EQ(os.str(), "model,step,loss,accuracy\nperformer,100,1.5,0.25\n");
}
