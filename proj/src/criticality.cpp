#include "clat/criticality.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "clat/error.hpp"

namespace clat {

namespace {

double weakness_from_features(const Tensor& clean, const Tensor& adv) {
  const std::vector<double> norms = batch_l2_norms(adv - clean);
  double mean = 0.0;
  for (const double v : norms) mean += v;
  mean /= static_cast<double>(norms.size());
  const int64_t per_sample = clean.numel() / clean.dim(0);
  return mean / static_cast<double>(per_sample);
}

constexpr double kWeaknessFloor = 1e-12;

}  // namespace

std::string CriticalityReport::to_text() const {
  std::ostringstream os;
  os << "criticality-report v1\n";
  os << "epsilon " << epsilon << "\n";
  os << "batch " << batch_size << "\n";
  os << "seed " << seed << "\n";
  os << "layers " << layer_count() << "\n";
  for (int i = 0; i < layer_count(); ++i) {
    os << "layer " << (i + 1) << " W " << weakness[static_cast<size_t>(i)] << " C "
       << criticality[static_cast<size_t>(i)] << "\n";
  }
  os << "selected";
  for (const int i : selected) os << " " << i;
  os << "\n";
  return os.str();
}

double layer_weakness(const Network& net, const Tensor& x, const Tensor& delta, int layer) {
  const std::set<int> taps{layer};  // validated by forward_tape
  const auto [clean_logits, clean] = net.forward_with_taps(x, taps);
  (void)clean_logits;
  const auto [adv_logits, adv] = net.forward_with_taps(x + delta, taps);
  (void)adv_logits;
  return weakness_from_features(clean.features.at(layer), adv.features.at(layer));
}

CriticalityReport criticality_indices(const Network& net, const Tensor& x,
                                      const std::vector<int>& y, const AttackConfig& cfg,
                                      Rng& rng) {
  if (x.empty() || x.dim(0) < 1) throw UsageError("criticality_indices needs a non-empty batch");
  const int n = net.layer_count();
  std::set<int> taps;
  for (int i = 1; i <= n; ++i) taps.insert(i);

  const Tensor delta = pgd_untargeted(net, x, y, cfg, rng);

  // Exactly two tapped passes from here on.
  const auto [clean_logits, clean] = net.forward_with_taps(x, taps);
  (void)clean_logits;
  const auto [adv_logits, adv] = net.forward_with_taps(x + delta, taps);
  (void)adv_logits;

  CriticalityReport report;
  report.epsilon = cfg.epsilon;
  report.batch_size = x.dim(0);
  report.weakness.resize(static_cast<size_t>(n));
  report.criticality.resize(static_cast<size_t>(n));
  for (int i = 1; i <= n; ++i) {
    report.weakness[static_cast<size_t>(i - 1)] =
        weakness_from_features(clean.features.at(i), adv.features.at(i));
  }
  report.criticality[0] = report.weakness[0];
  for (int i = 2; i <= n; ++i) {
    const double prev = report.weakness[static_cast<size_t>(i - 2)];
    if (prev < kWeaknessFloor) {
      throw DegenerateFeatureError("layer " + std::to_string(i - 1) +
                                   " has (near-)zero feature weakness; criticality of layer " +
                                   std::to_string(i) + " is undefined");
    }
    report.criticality[static_cast<size_t>(i - 1)] = report.weakness[static_cast<size_t>(i - 1)] / prev;
  }
  return report;
}

std::vector<int> select_topk(const CriticalityReport& report, int k) {
  const int n = report.layer_count();
  if (k < 1 || k > n) {
    throw UsageError("k = " + std::to_string(k) + " out of range [1," + std::to_string(n) + "]");
  }
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 1);
  std::sort(order.begin(), order.end(), [&report](int a, int b) {
    const double ca = report.criticality[static_cast<size_t>(a - 1)];
    const double cb = report.criticality[static_cast<size_t>(b - 1)];
    if (ca != cb) return ca > cb;
    return a < b;
  });
  order.resize(static_cast<size_t>(k));
  return order;
}

int default_critical_count(int layer_count) {
  return std::max(1, static_cast<int>(std::ceil(0.05 * layer_count)));
}

StabilityStats stability_probe(const Network& net, const Dataset& data,
                               const std::vector<int>& batch_sizes, int trials, int k,
                               const AttackConfig& cfg, uint64_t seed) {
  if (trials < 2) throw UsageError("stability_probe needs trials >= 2");
  StabilityStats stats;
  stats.trials = trials;
  stats.k = k;
  std::map<int, int> top1_counts;
  int total_runs = 0;

  for (const int bs : batch_sizes) {
    if (bs > data.size()) {
      throw UsageError("stability batch size " + std::to_string(bs) + " exceeds dataset size " +
                       std::to_string(data.size()));
    }
    std::map<std::vector<int>, int> set_counts;
    std::vector<int> top1(static_cast<size_t>(trials));
    for (int t = 0; t < trials; ++t) {
      Rng pick(derive_seed(seed, "stability-batch", static_cast<uint64_t>(bs) * 100003u + t));
      std::vector<int> idx(static_cast<size_t>(data.size()));
      std::iota(idx.begin(), idx.end(), 0);
      pick.shuffle(idx);
      idx.resize(static_cast<size_t>(bs));
      auto [x, y] = data.gather(idx);
      Rng attack_rng(derive_seed(seed, "stability-attack", static_cast<uint64_t>(bs) * 100003u + t));
      CriticalityReport report = criticality_indices(net, x, y, cfg, attack_rng);
      std::vector<int> sel = select_topk(report, k);
      top1[static_cast<size_t>(t)] = sel.front();
      top1_counts[sel.front()]++;
      ++total_runs;
      std::sort(sel.begin(), sel.end());
      set_counts[sel]++;
    }
    StabilityBatchStats b;
    b.batch_size = bs;
    for (const auto& [set, count] : set_counts) {
      const double share = static_cast<double>(count) / trials;
      if (share > b.modal_set_share) {
        b.modal_set = set;
        b.modal_set_share = share;
      }
    }
    int64_t agreeing_pairs = 0;
    for (int a = 0; a < trials; ++a) {
      for (int c = a + 1; c < trials; ++c) {
        if (top1[static_cast<size_t>(a)] == top1[static_cast<size_t>(c)]) ++agreeing_pairs;
      }
    }
    b.pairwise_top1_agreement =
        static_cast<double>(agreeing_pairs) / (static_cast<double>(trials) * (trials - 1) / 2.0);
    stats.per_batch.push_back(std::move(b));
  }

  int best = 0;
  for (const auto& [layer, count] : top1_counts) {
    if (count > best) {
      best = count;
      stats.modal_top1 = layer;
    }
  }
  stats.overall_top1_modal_share = total_runs > 0 ? static_cast<double>(best) / total_runs : 0.0;
  return stats;
}

double curvature_weakness(const Network& net, const Tensor& x, int layer, const AttackConfig& cfg,
                          Rng& rng) {
  const Tensor delta = feature_deviation_pgd(net, x, {layer}, cfg, rng);
  const std::set<int> taps{layer};
  const auto [clean_logits, clean] = net.forward_with_taps(x, taps);
  (void)clean_logits;

  // One VJP pass: grad of sum_s ||F_i(x'_s) - F_i(x_s)||^2 wrt x' is the
  // per-sample gradient of each G_i, no higher-order terms involved.
  TapeForward fwd = net.forward_tape(x + delta, taps, /*input_grad=*/true, /*param_grads=*/false);
  const int diff = fwd.tape.sub(fwd.tap_ids.at(layer), fwd.tape.leaf(clean.features.at(layer)));
  const int proxy = fwd.tape.sumsq_all(diff);
  const BackwardResult back = fwd.tape.backward(proxy);
  const Tensor& grad = back.at(fwd.input_id);

  const std::vector<double> grad_norms = batch_l2_norms(grad);
  const std::vector<double> delta_norms = batch_l2_norms(delta);
  double mean = 0.0;
  for (size_t s = 0; s < grad_norms.size(); ++s) {
    if (delta_norms[s] > 0.0) mean += grad_norms[s] / delta_norms[s];
  }
  return mean / static_cast<double>(grad_norms.size());
}

}  // namespace clat
