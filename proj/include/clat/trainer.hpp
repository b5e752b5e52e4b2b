#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "clat/attacks.hpp"
#include "clat/criticality.hpp"
#include "clat/data.hpp"
#include "clat/metrics.hpp"
#include "clat/network.hpp"

namespace clat {

struct TrainConfig {
  int total_epochs = 100;
  int pretrain_epochs = 50;
  int reselect_period = 10;  // epochs between criticality reevaluations
  int k = 0;                 // critical layers; 0 selects about 5% of layers
  float lambda = 1.0f;       // balance between CE and the criticality loss
  float lr0 = 0.1f;
  float momentum = 0.9f;
  int batch_size = 128;
  uint64_t seed = 1;
  AttackConfig attack;
  int criticality_batch = 100;  // samples per criticality reevaluation
  int eval_samples = 512;       // per-epoch evaluation cap (min 1)
  bool fast_inner = false;      // single-step inner maximization
  bool ce_on_adv = false;       // CE term on x+delta instead of clean x
  bool restart_cosine = false;  // restart the schedule at the CLAT boundary
  bool dynamic_selection = true;

  void validate(int layer_count) const;
  int effective_k(int layer_count) const;
};

/// Per-optimizer-step loss components, exposed for instrumentation.
struct StepRecord {
  int epoch = 0;
  int step = 0;
  double ce = 0.0;
  double crit = 0.0;
  double total = 0.0;
};

/// Per-layer momentum buffers. Buffers of layers leaving the critical set
/// are cleared at reselection.
struct SgdState {
  std::vector<Tensor> vel_w, vel_b;
  void ensure(const Network& net);
  void clear_layer(int index);
};

struct EvalResult {
  double clean_acc = 0.0;
  double adv_acc = 0.0;
};

/// Clean accuracy, plus adversarial accuracy when an attack is given.
/// Never mutates the network. `max_samples` caps the evaluated prefix
/// (0 = everything).
EvalResult evaluate(const Network& net, const Dataset& data, const AttackConfig* attack,
                    uint64_t seed, int max_samples = 0);

/// Training state that a checkpoint must carry to resume deterministically.
struct TrainState {
  int completed_epochs = 0;
  uint64_t seed = 0;
  std::vector<int> critical;  // empty while pretraining
  std::vector<Tensor> vel_w, vel_b;
};

/// Drives the full schedule: PGD adversarial pretraining followed by
/// criticality-targeted fine-tuning of the selected layers, with periodic
/// reselection. All randomness is derived per-(purpose, epoch) from the
/// config seed, so runs are bit-reproducible and resumable.
class Trainer {
public:
  /// Keeps references: net and both datasets must outlive the trainer.
  Trainer(Network& net, const Dataset& train, const Dataset& test, TrainConfig cfg);

  /// One epoch of standard PGD adversarial training over all layers.
  EpochMetrics pgd_at_epoch();
  /// One epoch of critical-layer fine-tuning with the current set.
  EpochMetrics clat_epoch();
  /// Runs (or resumes) the schedule until `until_epoch` (0 = total_epochs).
  std::vector<EpochMetrics> run(int until_epoch = 0);

  /// Recomputes criticality on a fresh batch and installs the new set.
  void reselect();

  int completed_epochs() const { return completed_; }
  const std::vector<int>& critical_set() const { return critical_; }
  int reselect_count() const { return reselects_; }
  float learning_rate(int epoch) const;  // cosine decay, 1-based epoch

  TrainState state() const;
  void restore(const TrainState& state);

  // Instrumentation hooks (may stay empty).
  std::function<void(const Network&, const StepRecord&)> on_step;
  std::function<void(const Network&, const CriticalityReport&, const std::vector<int>&)> on_reselect;

private:
  EpochMetrics finish_epoch(Phase phase, double ce, double crit);

  Network& net_;
  const Dataset& train_;
  const Dataset& test_;
  TrainConfig cfg_;
  SgdState opt_;
  std::vector<int> critical_;
  int completed_ = 0;
  int reselects_ = 0;
};

}  // namespace clat
