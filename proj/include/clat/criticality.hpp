#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clat/attacks.hpp"
#include "clat/data.hpp"
#include "clat/network.hpp"

namespace clat {

/// Per-layer weakness and criticality of a network under one perturbation
/// budget. weakness[i-1] is W_eps(F_i); criticality[i-1] is C_{f_i} with
/// C_{f_1} = W_eps(F_1) and C_{f_i} = W_eps(F_i) / W_eps(F_{i-1}) above.
struct CriticalityReport {
  std::vector<double> weakness;
  std::vector<double> criticality;
  std::vector<int> selected;  // descending criticality, ties -> smaller index
  float epsilon = 0.0f;
  int batch_size = 0;
  uint64_t seed = 0;

  int layer_count() const { return static_cast<int>(weakness.size()); }
  /// Line-oriented text record, one layer per line.
  std::string to_text() const;
};

/// W_eps(F_i) for one layer under a fixed perturbation: mean over the batch
/// of the per-sample feature deviation norm, divided by the feature
/// dimensionality N_i.
double layer_weakness(const Network& net, const Tensor& x, const Tensor& delta, int layer);

/// Runs one untargeted PGD attack against the output loss, then derives
/// every layer's weakness and criticality index from exactly one clean and
/// one adversarial tapped forward pass.
CriticalityReport criticality_indices(const Network& net, const Tensor& x,
                                      const std::vector<int>& y, const AttackConfig& cfg,
                                      Rng& rng);

/// Indices of the k largest criticality values, descending, ties broken by
/// the smaller layer index.
std::vector<int> select_topk(const CriticalityReport& report, int k);

/// Default critical-set size: about 5% of layers, at least one.
int default_critical_count(int layer_count);

struct StabilityBatchStats {
  int batch_size = 0;
  std::vector<int> modal_set;        // most frequent top-k set (ascending)
  double modal_set_share = 0.0;      // frequency of the modal set
  double pairwise_top1_agreement = 0.0;
};

struct StabilityStats {
  std::vector<StabilityBatchStats> per_batch;
  int modal_top1 = 0;                 // most frequent top-1 layer over all runs
  double overall_top1_modal_share = 0.0;
  int trials = 0;
  int k = 0;
};

/// Repeats the criticality computation `trials` times per batch size with
/// fresh random batches and attack seeds, and summarizes how stable the
/// selected sets are.
StabilityStats stability_probe(const Network& net, const Dataset& data,
                               const std::vector<int>& batch_sizes, int trials, int k,
                               const AttackConfig& cfg, uint64_t seed);

/// Curvature-based weakness estimate for one layer: attacks the layer's
/// features directly, then evaluates the gradient of the squared feature
/// deviation at the attacked point with a single vector-Jacobian backward
/// pass. Returns the batch mean of ||grad|| / ||x'-x||, with zero-length
/// perturbations contributing zero.
double curvature_weakness(const Network& net, const Tensor& x, int layer, const AttackConfig& cfg,
                          Rng& rng);

}  // namespace clat
