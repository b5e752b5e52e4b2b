#include "clat/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "clat/error.hpp"

namespace clat {

namespace {

constexpr const char* kHeader = "epoch,phase,clean_acc,adv_acc,ce_loss,crit_loss,critical_set,trainable_frac";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string phase_name(Phase phase) { return phase == Phase::pretrain ? "pretrain" : "clat"; }

Phase parse_phase(const std::string& name) {
  if (name == "pretrain") return Phase::pretrain;
  if (name == "clat") return Phase::clat;
  throw FormatError("unknown phase '" + name + "'");
}

std::string format_critical_set(const std::vector<int>& set) {
  std::string out;
  for (size_t i = 0; i < set.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(set[i]);
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << kHeader << "\n";
  for (const auto& m : rows) {
    out << m.epoch << ',' << phase_name(m.phase) << ',' << fmt(m.clean_acc) << ',' << fmt(m.adv_acc)
        << ',' << fmt(m.ce_loss) << ',' << fmt(m.crit_loss) << ',' << format_critical_set(m.critical_set)
        << ',' << fmt(m.trainable_frac) << "\n";
  }
}

std::vector<EpochMetrics> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  if (line != kHeader) throw FormatError(path + ": row 1: unexpected header '" + line + "'");

  std::vector<EpochMetrics> rows;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::vector<std::string> f = split(line, ',');
    if (f.size() != 8) {
      throw FormatError(path + ": row " + std::to_string(row) + ": expected 8 fields, got " +
                        std::to_string(f.size()));
    }
    EpochMetrics m;
    try {
      m.epoch = std::stoi(f[0]);
      m.phase = parse_phase(f[1]);
      m.clean_acc = std::stod(f[2]);
      m.adv_acc = std::stod(f[3]);
      m.ce_loss = std::stod(f[4]);
      m.crit_loss = std::stod(f[5]);
      if (!f[6].empty()) {
        for (const auto& tok : split(f[6], ';')) m.critical_set.push_back(std::stoi(tok));
      }
      m.trainable_frac = std::stod(f[7]);
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(path + ": row " + std::to_string(row) + ": " + e.what());
    }
    rows.push_back(std::move(m));
  }
  return rows;
}

}  // namespace clat
