#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "clat/data.hpp"
#include "clat/error.hpp"
#include "clat/metrics.hpp"
#include "clat/trainer.hpp"
#include "support/test_utils.hpp"

namespace clat {
namespace {

using clat::testing::toy_cnn6;

TrainConfig small_cfg(uint64_t seed) {
  TrainConfig cfg;
  cfg.total_epochs = 4;
  cfg.pretrain_epochs = 2;
  cfg.reselect_period = 2;
  cfg.k = 1;
  cfg.batch_size = 32;
  cfg.eval_samples = 32;
  cfg.criticality_batch = 32;
  cfg.seed = seed;
  cfg.attack.epsilon = 0.05f;
  cfg.attack.alpha = 0.0125f;
  cfg.attack.steps = 5;
  return cfg;
}

Dataset small_train() { return synth_dataset(4, 128, 12, 500, 0.1f); }
Dataset small_test() { return synth_dataset(4, 64, 12, 501, 0.1f); }

TEST(Trainer, ZeroEpsilonPgdAtIsCleanTrainingBitExact) {
  const Dataset train = small_train();
  const Dataset test = small_test();
  TrainConfig cfg = small_cfg(11);
  cfg.attack.epsilon = 0.0f;
  cfg.total_epochs = 1;
  cfg.pretrain_epochs = 1;

  Network net = toy_cnn6(1, 12, 4, 300);
  Trainer trainer(net, train, test, cfg);
  trainer.pgd_at_epoch();

  // Replica: a plain clean SGD epoch over the identical shuffle stream.
  Network replica = toy_cnn6(1, 12, 4, 300);
  std::vector<Tensor> vel_w, vel_b;
  for (const auto& l : replica.layers()) {
    vel_w.emplace_back(l.weight.shape());
    vel_b.emplace_back(l.bias.shape());
  }
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", 1));
  std::vector<int> idx(static_cast<size_t>(train.size()));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  shuffle_rng.shuffle(idx);
  const float lr = cfg.lr0;  // cosine schedule starts at lr0
  for (int start = 0; start < train.size(); start += cfg.batch_size) {
    const int end = std::min(train.size(), start + cfg.batch_size);
    auto [x, y] = train.gather(std::vector<int>(idx.begin() + start, idx.begin() + end));
    TapeForward fwd = replica.forward_tape(x, {}, false, true);
    const BackwardResult back = fwd.tape.backward(fwd.tape.softmax_cross_entropy(fwd.logits_id, y));
    GradientRequest req;
    req.wrt_layers = replica.trainable_layers();
    const Gradients grads = replica.gradients(fwd, back, req);
    for (const auto& [layer, g] : grads.layers) {
      LayerSpec& l = replica.layer_mutable(layer);
      Tensor& vw = vel_w[static_cast<size_t>(layer - 1)];
      Tensor& vb = vel_b[static_cast<size_t>(layer - 1)];
      for (int64_t i = 0; i < vw.numel(); ++i) {
        vw[i] = cfg.momentum * vw[i] - lr * g.weight[i];
        l.weight[i] += vw[i];
      }
      for (int64_t i = 0; i < vb.numel(); ++i) {
        vb[i] = cfg.momentum * vb[i] - lr * g.bias[i];
        l.bias[i] += vb[i];
      }
    }
  }
  for (int i = 1; i <= net.layer_count(); ++i) {
    EXPECT_TRUE(net.layer(i).weight.bit_equal(replica.layer(i).weight)) << "layer " << i;
    EXPECT_TRUE(net.layer(i).bias.bit_equal(replica.layer(i).bias)) << "layer " << i;
  }
}

TEST(Trainer, ClatEpochFreezesNonCriticalBytes) {
  const Dataset train = small_train();
  const Dataset test = small_test();
  TrainConfig cfg = small_cfg(12);
  cfg.pretrain_epochs = 0;
  Network net = toy_cnn6(1, 12, 4, 301);

  Trainer trainer(net, train, test, cfg);
  TrainState inject;
  inject.critical = {2};
  inject.seed = cfg.seed;
  trainer.restore(inject);

  std::vector<Tensor> before_w, before_b;
  for (const auto& l : net.layers()) {
    before_w.push_back(l.weight);
    before_b.push_back(l.bias);
  }
  const EpochMetrics m = trainer.clat_epoch();
  EXPECT_EQ(m.phase, Phase::clat);
  EXPECT_EQ(m.critical_set, (std::vector<int>{2}));

  for (int i = 1; i <= net.layer_count(); ++i) {
    if (i == 2) {
      EXPECT_FALSE(net.layer(i).weight.bit_equal(before_w[static_cast<size_t>(i - 1)]));
    } else {
      EXPECT_TRUE(net.layer(i).weight.bit_equal(before_w[static_cast<size_t>(i - 1)])) << "layer " << i;
      EXPECT_TRUE(net.layer(i).bias.bit_equal(before_b[static_cast<size_t>(i - 1)])) << "layer " << i;
    }
  }
}

TEST(Trainer, ObjectiveDecompositionHoldsEveryStep) {
  const Dataset train = small_train();
  const Dataset test = small_test();
  TrainConfig cfg = small_cfg(13);
  cfg.pretrain_epochs = 0;
  cfg.total_epochs = 1;
  cfg.lambda = 0.7f;
  Network net = toy_cnn6(1, 12, 4, 302);
  Trainer trainer(net, train, test, cfg);
  TrainState inject;
  inject.critical = {3};
  inject.seed = cfg.seed;
  trainer.restore(inject);

  int steps = 0;
  trainer.on_step = [&steps, &cfg](const Network&, const StepRecord& rec) {
    ++steps;
    EXPECT_NEAR(rec.total, rec.ce + cfg.lambda * rec.crit, 1e-6);
  };
  trainer.clat_epoch();
  EXPECT_EQ(steps, 4);  // 128 samples / batch 32
}

TEST(Trainer, LambdaZeroStillRespectsFreezeAndRecordsCriticality) {
  const Dataset train = small_train();
  const Dataset test = small_test();
  TrainConfig cfg = small_cfg(14);
  cfg.pretrain_epochs = 0;
  cfg.total_epochs = 1;
  cfg.lambda = 0.0f;
  Network net = toy_cnn6(1, 12, 4, 303);
  Trainer trainer(net, train, test, cfg);
  TrainState inject;
  inject.critical = {5};
  inject.seed = cfg.seed;
  trainer.restore(inject);

  const Tensor before = net.layer(1).weight;
  const EpochMetrics m = trainer.clat_epoch();
  EXPECT_GT(m.crit_loss, 0.0);  // still measured, just not optimized
  EXPECT_TRUE(net.layer(1).weight.bit_equal(before));
  EXPECT_LT(m.trainable_frac, 1.0);
}

TEST(Trainer, ReselectionLiveness) {
  const Dataset train = small_train();
  const Dataset test = small_test();
  TrainConfig cfg = small_cfg(15);
  cfg.pretrain_epochs = 0;
  cfg.total_epochs = 20;
  cfg.reselect_period = 10;
  cfg.attack.steps = 2;
  cfg.eval_samples = 8;
  Network net = toy_cnn6(1, 12, 4, 304);
  Trainer trainer(net, train, test, cfg);
  trainer.run();
  EXPECT_EQ(trainer.reselect_count(), 2);  // ceil(20/10)

  // A period longer than the phase degenerates to one selection.
  Network net2 = toy_cnn6(1, 12, 4, 304);
  cfg.total_epochs = 5;
  cfg.reselect_period = 50;
  Trainer trainer2(net2, train, test, cfg);
  trainer2.run();
  EXPECT_EQ(trainer2.reselect_count(), 1);

  // Non-dynamic ablation arm: selection happens exactly once.
  Network net3 = toy_cnn6(1, 12, 4, 304);
  cfg.total_epochs = 5;
  cfg.reselect_period = 2;
  cfg.dynamic_selection = false;
  Trainer trainer3(net3, train, test, cfg);
  trainer3.run();
  EXPECT_EQ(trainer3.reselect_count(), 1);
}

TEST(Trainer, FullRunDeterminism) {
  const Dataset train = small_train();
  const Dataset test = small_test();
  auto run_once = [&] {
    Network net = toy_cnn6(1, 12, 4, 305);
    Trainer trainer(net, train, test, small_cfg(16));
    trainer.run();
    return net;
  };
  const Network a = run_once();
  const Network b = run_once();
  for (int i = 1; i <= a.layer_count(); ++i) {
    EXPECT_TRUE(a.layer(i).weight.bit_equal(b.layer(i).weight)) << "layer " << i;
    EXPECT_TRUE(a.layer(i).bias.bit_equal(b.layer(i).bias)) << "layer " << i;
  }
}

TEST(Trainer, EvaluateChanceLevelOnRandomNet) {
  const Network net = toy_cnn6(1, 12, 4, 306);
  const Dataset data = synth_dataset(4, 1024, 12, 502, 0.1f);
  const EvalResult r = evaluate(net, data, nullptr, 1);
  EXPECT_NEAR(r.clean_acc, 0.25, 0.05);
}

TEST(Trainer, AdversarialAccuracyAtMostClean) {
  const Dataset train = small_train();
  const Dataset eval_split = small_test();
  const Dataset test = synth_dataset(4, 1024, 12, 503, 0.1f);
  Network net = toy_cnn6(1, 12, 4, 307);
  TrainConfig cfg = small_cfg(17);
  cfg.total_epochs = 3;
  cfg.pretrain_epochs = 3;
  Trainer trainer(net, train, eval_split, cfg);
  trainer.run();

  AttackConfig attack = cfg.attack;
  const EvalResult r = evaluate(net, test, &attack, 2);
  EXPECT_LE(r.adv_acc, r.clean_acc);
}

TEST(Trainer, EpsilonSweepNonIncreasing) {
  const Dataset train = small_train();
  const Dataset eval_split = small_test();
  const Dataset test = synth_dataset(4, 256, 12, 504, 0.1f);
  Network net = toy_cnn6(1, 12, 4, 308);
  TrainConfig cfg = small_cfg(18);
  cfg.total_epochs = 3;
  cfg.pretrain_epochs = 3;
  Trainer trainer(net, train, eval_split, cfg);
  trainer.run();

  double prev = 2.0;
  for (const float eps : {0.0f, 0.05f, 0.15f}) {
    AttackConfig attack = cfg.attack;
    attack.epsilon = eps;
    const EvalResult r =
        eps == 0.0f ? evaluate(net, test, nullptr, 3) : evaluate(net, test, &attack, 3);
    EXPECT_LE(r.adv_acc, prev + 0.02);
    prev = r.adv_acc;
  }
}

TEST(Trainer, CosineScheduleShape) {
  const Dataset train = small_train();
  const Dataset test = small_test();
  TrainConfig cfg = small_cfg(19);
  cfg.total_epochs = 100;
  cfg.pretrain_epochs = 50;
  Network net = toy_cnn6(1, 12, 4, 309);
  Trainer trainer(net, train, test, cfg);
  EXPECT_FLOAT_EQ(trainer.learning_rate(1), cfg.lr0);
  EXPECT_LT(trainer.learning_rate(51), cfg.lr0);  // no restart by default
  EXPECT_LT(trainer.learning_rate(100), trainer.learning_rate(51));

  cfg.restart_cosine = true;
  Trainer restarting(net, train, test, cfg);
  EXPECT_FLOAT_EQ(restarting.learning_rate(51), cfg.lr0);
}

TEST(Trainer, LossDecreasesOverEarlyEpochs) {
  const Dataset train = synth_dataset(4, 256, 12, 505, 0.05f);
  const Dataset test = small_test();
  Network net = toy_cnn6(1, 12, 4, 310);
  TrainConfig cfg = small_cfg(20);
  cfg.total_epochs = 5;
  cfg.pretrain_epochs = 5;
  cfg.lr0 = 0.05f;
  Trainer trainer(net, train, test, cfg);
  const std::vector<EpochMetrics> rows = trainer.run();
  EXPECT_LT(rows.back().ce_loss, rows.front().ce_loss);
}

TEST(Trainer, ConfigValidation) {
  const Dataset train = small_train();
  const Dataset test = small_test();
  Network net = toy_cnn6(1, 12, 4, 311);

  TrainConfig bad = small_cfg(21);
  bad.pretrain_epochs = 10;
  bad.total_epochs = 5;
  EXPECT_THROW(Trainer(net, train, test, bad), ConfigError);

  bad = small_cfg(21);
  bad.k = 99;
  EXPECT_THROW(Trainer(net, train, test, bad), ConfigError);

  bad = small_cfg(21);
  bad.lambda = -1.0f;
  EXPECT_THROW(Trainer(net, train, test, bad), ConfigError);

  // clat epoch without a critical set is a usage error.
  Trainer trainer(net, train, test, small_cfg(21));
  EXPECT_THROW(trainer.clat_epoch(), UsageError);
}

TEST(Metrics, CsvRoundTripAndErrors) {
  EpochMetrics a;
  a.epoch = 1;
  a.phase = Phase::pretrain;
  a.clean_acc = 0.75;
  a.adv_acc = 0.5;
  a.ce_loss = 1.25;
  a.crit_loss = 0.0;
  a.trainable_frac = 1.0;
  EpochMetrics b = a;
  b.epoch = 2;
  b.phase = Phase::clat;
  b.critical_set = {4, 2};
  b.trainable_frac = 0.125;

  const std::string path = std::string(::testing::TempDir()) + "metrics_roundtrip.csv";
  write_metrics_csv(path, {a, b});
  const std::vector<EpochMetrics> rows = read_metrics_csv(path);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].critical_set, (std::vector<int>{4, 2}));
  EXPECT_EQ(rows[1].phase, Phase::clat);
  EXPECT_DOUBLE_EQ(rows[0].clean_acc, 0.75);
  EXPECT_DOUBLE_EQ(rows[1].trainable_frac, 0.125);

  const std::string bad = std::string(::testing::TempDir()) + "metrics_bad.csv";
  {
    std::ofstream out(bad);
    out << "epoch,phase,clean_acc,adv_acc,ce_loss,crit_loss,critical_set,trainable_frac\n";
    out << "1,pretrain,0.5\n";
  }
  try {
    read_metrics_csv(bad);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
}

}  // namespace
}  // namespace clat
