#pragma once

#include <string>
#include <vector>

namespace clat {

enum class Phase : uint8_t { pretrain, clat };

std::string phase_name(Phase phase);
Phase parse_phase(const std::string& name);

struct EpochMetrics {
  int epoch = 0;
  Phase phase = Phase::pretrain;
  double clean_acc = 0.0;
  double adv_acc = 0.0;
  double ce_loss = 0.0;
  double crit_loss = 0.0;
  std::vector<int> critical_set;  // empty during pretraining
  double trainable_frac = 1.0;
};

/// CSV column order is fixed:
/// epoch,phase,clean_acc,adv_acc,ce_loss,crit_loss,critical_set,trainable_frac
/// The critical set is ';'-joined inside its field.
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows);
std::vector<EpochMetrics> read_metrics_csv(const std::string& path);

std::string format_critical_set(const std::vector<int>& set);

}  // namespace clat
