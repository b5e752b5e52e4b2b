#include "clat/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "clat/error.hpp"

namespace clat {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string make_report(const std::vector<RunSeries>& runs) {
  if (runs.empty()) throw UsageError("report needs at least one metrics series");
  for (const auto& r : runs) {
    if (r.rows.empty()) throw FormatError(r.name + ": no metric rows");
  }
  std::ostringstream os;

  os << "runs:\n";
  for (size_t i = 0; i < runs.size(); ++i) {
    os << "  [" << (i + 1) << "] " << runs[i].name << " (" << runs[i].rows.size() << " epochs)\n";
  }

  int max_epoch = 0;
  for (const auto& r : runs) {
    for (const auto& m : r.rows) max_epoch = std::max(max_epoch, m.epoch);
  }

  os << "\nseries (epoch, then clean/adv accuracy per run):\n";
  os << "epoch";
  for (size_t i = 0; i < runs.size(); ++i) {
    os << "\tclean_" << (i + 1) << "\tadv_" << (i + 1);
  }
  os << "\n";
  for (int e = 1; e <= max_epoch; ++e) {
    os << e;
    for (const auto& r : runs) {
      const auto it = std::find_if(r.rows.begin(), r.rows.end(),
                                   [e](const EpochMetrics& m) { return m.epoch == e; });
      if (it == r.rows.end()) {
        os << "\t-\t-";
      } else {
        os << "\t" << fmt(it->clean_acc) << "\t" << fmt(it->adv_acc);
      }
    }
    os << "\n";
  }

  os << "\nsummary (final = last row, best = max adversarial accuracy):\n";
  os << "run\tfinal_clean\tfinal_adv\tbest_adv\tbest_epoch\n";
  for (size_t i = 0; i < runs.size(); ++i) {
    const auto& rows = runs[i].rows;
    const EpochMetrics& last = rows.back();
    const auto best = std::max_element(rows.begin(), rows.end(),
                                       [](const EpochMetrics& a, const EpochMetrics& b) {
                                         return a.adv_acc < b.adv_acc;
                                       });
    os << (i + 1) << "\t" << fmt(last.clean_acc) << "\t" << fmt(last.adv_acc) << "\t"
       << fmt(best->adv_acc) << "\t" << best->epoch << "\n";
  }

  if (runs.size() > 1) {
    os << "\ndeltas of final metrics vs run 1:\n";
    os << "run\td_clean\td_adv\n";
    const EpochMetrics& base = runs.front().rows.back();
    for (size_t i = 1; i < runs.size(); ++i) {
      const EpochMetrics& last = runs[i].rows.back();
      os << (i + 1) << "\t" << fmt(last.clean_acc - base.clean_acc) << "\t"
         << fmt(last.adv_acc - base.adv_acc) << "\n";
    }
  }
  return os.str();
}

}  // namespace clat
