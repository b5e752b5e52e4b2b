#pragma once

#include <string>
#include <vector>

#include "clat/metrics.hpp"

namespace clat {

struct RunSeries {
  std::string name;
  std::vector<EpochMetrics> rows;
};

/// Plain-text comparison of one or more metric series: aligned per-epoch
/// accuracy columns, final/best numbers per run, and deltas of each run
/// against the first.
std::string make_report(const std::vector<RunSeries>& runs);

}  // namespace clat
