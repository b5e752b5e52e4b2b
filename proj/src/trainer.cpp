#include "clat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clat/error.hpp"

namespace clat {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<std::vector<int>> make_batches(int n, int batch_size, Rng& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    batches.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return batches;
}

int argmax_row(const float* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

double batch_accuracy(const Tensor& logits, const std::vector<int>& y) {
  const int n = logits.dim(0), k = logits.dim(1);
  int hits = 0;
  for (int s = 0; s < n; ++s) {
    if (argmax_row(logits.data() + static_cast<int64_t>(s) * k, k) == y[static_cast<size_t>(s)]) ++hits;
  }
  return static_cast<double>(hits) / n;
}

}  // namespace

void TrainConfig::validate(int layer_count) const {
  if (total_epochs < 1 || pretrain_epochs < 0 || pretrain_epochs > total_epochs) {
    throw ConfigError("epochs must satisfy 0 <= pretrain_epochs <= total_epochs, total >= 1");
  }
  if (reselect_period < 1) throw ConfigError("reselect_period must be >= 1");
  if (lambda < 0.0f) throw ConfigError("lambda must be >= 0");
  if (k < 0 || k > layer_count) {
    throw ConfigError("k must be in [1," + std::to_string(layer_count) + "] (or 0 for the default)");
  }
  if (lr0 <= 0.0f || momentum < 0.0f || momentum >= 1.0f) throw ConfigError("bad lr/momentum");
  if (batch_size < 1 || criticality_batch < 1 || eval_samples < 1) {
    throw ConfigError("batch sizes must be positive");
  }
  attack.validate();
}

int TrainConfig::effective_k(int layer_count) const {
  return k == 0 ? default_critical_count(layer_count) : k;
}

void SgdState::ensure(const Network& net) {
  if (static_cast<int>(vel_w.size()) == net.layer_count()) return;
  vel_w.clear();
  vel_b.clear();
  for (const auto& l : net.layers()) {
    vel_w.emplace_back(l.weight.shape());
    vel_b.emplace_back(l.bias.shape());
  }
}

void SgdState::clear_layer(int index) {
  vel_w[static_cast<size_t>(index - 1)] = Tensor(vel_w[static_cast<size_t>(index - 1)].shape());
  vel_b[static_cast<size_t>(index - 1)] = Tensor(vel_b[static_cast<size_t>(index - 1)].shape());
}

namespace {

// v <- momentum*v - lr*g; w <- w + v, layer by layer in ascending index.
void sgd_step(Network& net, const Gradients& grads, SgdState& opt, float lr, float momentum) {
  opt.ensure(net);
  for (const auto& [index, g] : grads.layers) {
    LayerSpec& l = net.layer_mutable(index);
    Tensor& vw = opt.vel_w[static_cast<size_t>(index - 1)];
    Tensor& vb = opt.vel_b[static_cast<size_t>(index - 1)];
    for (int64_t i = 0; i < vw.numel(); ++i) {
      vw[i] = momentum * vw[i] - lr * g.weight[i];
      l.weight[i] += vw[i];
    }
    for (int64_t i = 0; i < vb.numel(); ++i) {
      vb[i] = momentum * vb[i] - lr * g.bias[i];
      l.bias[i] += vb[i];
    }
  }
}

}  // namespace

EvalResult evaluate(const Network& net, const Dataset& data, const AttackConfig* attack,
                    uint64_t seed, int max_samples) {
  const int n = max_samples > 0 ? std::min(max_samples, data.size()) : data.size();
  if (n < 1) throw UsageError("evaluate needs at least one sample");
  Rng attack_rng(derive_seed(seed, "eval-attack", 0));
  constexpr int kEvalBatch = 256;
  double clean_hits = 0.0, adv_hits = 0.0;
  for (int start = 0; start < n; start += kEvalBatch) {
    const int end = std::min(n, start + kEvalBatch);
    std::vector<int> idx(static_cast<size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    auto [x, y] = data.gather(idx);
    clean_hits += batch_accuracy(net.forward(x), y) * (end - start);
    if (attack != nullptr) {
      const Tensor delta = pgd_untargeted(net, x, y, *attack, attack_rng);
      adv_hits += batch_accuracy(net.forward(x + delta), y) * (end - start);
    }
  }
  EvalResult result;
  result.clean_acc = clean_hits / n;
  result.adv_acc = attack != nullptr ? adv_hits / n : result.clean_acc;
  return result;
}

Trainer::Trainer(Network& net, const Dataset& train, const Dataset& test, TrainConfig cfg)
    : net_(net), train_(train), test_(test), cfg_(std::move(cfg)) {
  cfg_.validate(net_.layer_count());
  opt_.ensure(net_);
}

float Trainer::learning_rate(int epoch) const {
  int t = epoch - 1;
  int span = cfg_.total_epochs;
  if (cfg_.restart_cosine && epoch > cfg_.pretrain_epochs) {
    t = epoch - cfg_.pretrain_epochs - 1;
    span = cfg_.total_epochs - cfg_.pretrain_epochs;
  }
  return cfg_.lr0 * 0.5f * (1.0f + static_cast<float>(std::cos(kPi * t / span)));
}

EpochMetrics Trainer::finish_epoch(Phase phase, double ce, double crit) {
  EpochMetrics m;
  m.epoch = completed_;
  m.phase = phase;
  m.ce_loss = ce;
  m.crit_loss = crit;
  m.critical_set = phase == Phase::clat ? critical_ : std::vector<int>{};
  m.trainable_frac = net_.param_census().fraction;
  const EvalResult ev = evaluate(net_, test_, cfg_.attack.epsilon > 0 ? &cfg_.attack : nullptr,
                                 derive_seed(cfg_.seed, "eval", static_cast<uint64_t>(completed_)),
                                 cfg_.eval_samples);
  m.clean_acc = ev.clean_acc;
  m.adv_acc = ev.adv_acc;
  return m;
}

EpochMetrics Trainer::pgd_at_epoch() {
  const int epoch = completed_ + 1;
  const float lr = learning_rate(epoch);
  Rng shuffle_rng(derive_seed(cfg_.seed, "shuffle", static_cast<uint64_t>(epoch)));
  Rng attack_rng(derive_seed(cfg_.seed, "attack", static_cast<uint64_t>(epoch)));

  GradientRequest request;
  request.wrt_layers = net_.trainable_layers();

  double ce_sum = 0.0;
  int64_t seen = 0;
  int step = 0;
  for (const auto& batch : make_batches(train_.size(), cfg_.batch_size, shuffle_rng)) {
    auto [x, y] = train_.gather(batch);
    const Tensor delta = pgd_untargeted(net_, x, y, cfg_.attack, attack_rng);
    TapeForward fwd = net_.forward_tape(x + delta, {}, /*input_grad=*/false, /*param_grads=*/true);
    const int loss = fwd.tape.softmax_cross_entropy(fwd.logits_id, y);
    const double ce = fwd.tape.value(loss)[0];
    const BackwardResult back = fwd.tape.backward(loss);
    sgd_step(net_, net_.gradients(fwd, back, request), opt_, lr, cfg_.momentum);
    ce_sum += ce * static_cast<double>(batch.size());
    seen += static_cast<int64_t>(batch.size());
    if (on_step) on_step(net_, StepRecord{epoch, ++step, ce, 0.0, ce});
  }
  ++completed_;
  return finish_epoch(Phase::pretrain, ce_sum / static_cast<double>(seen), 0.0);
}

EpochMetrics Trainer::clat_epoch() {
  if (critical_.empty()) throw UsageError("clat_epoch requires a non-empty critical set");
  const int epoch = completed_ + 1;
  const float lr = learning_rate(epoch);
  Rng shuffle_rng(derive_seed(cfg_.seed, "shuffle", static_cast<uint64_t>(epoch)));
  Rng attack_rng(derive_seed(cfg_.seed, "attack", static_cast<uint64_t>(epoch)));

  AttackConfig inner = cfg_.attack;
  if (cfg_.fast_inner) {
    inner.steps = 1;
    inner.alpha = inner.epsilon;
  }
  const std::set<int> taps(critical_.begin(), critical_.end());
  const int last_critical = *std::max_element(critical_.begin(), critical_.end());

  GradientRequest request;
  request.wrt_layers = critical_;

  double ce_sum = 0.0, crit_sum = 0.0;
  int64_t seen = 0;
  int step = 0;
  for (const auto& batch : make_batches(train_.size(), cfg_.batch_size, shuffle_rng)) {
    auto [x, y] = train_.gather(batch);
    const Tensor delta = feature_deviation_pgd(net_, x, critical_, inner, attack_rng);

    // One tape, two chains sharing parameter leaves: the clean chain
    // provides the CE logits and the clean features, the adversarial chain
    // the perturbed features. Both branches of the deviation receive
    // parameter gradients.
    TapeForward fwd;
    fwd.input_id = fwd.tape.leaf(x, false);
    fwd.logits_id = net_.record_chain(fwd.tape, fwd.input_id, taps, fwd.tap_ids, fwd.params,
                                      /*param_grads=*/true);
    const int adv_input = fwd.tape.leaf(x + delta, false);
    std::map<int, int> adv_taps;
    net_.record_chain(fwd.tape, adv_input, taps, adv_taps, fwd.params,
                      /*param_grads=*/true, last_critical);

    int ce_node;
    if (cfg_.ce_on_adv) {
      // Optional variant: CE on x+delta, which needs the adversarial chain
      // run to the head.
      std::map<int, int> none;
      const int adv_logits = net_.record_chain(fwd.tape, adv_input, {}, none, fwd.params, true);
      ce_node = fwd.tape.softmax_cross_entropy(adv_logits, y);
    } else {
      ce_node = fwd.tape.softmax_cross_entropy(fwd.logits_id, y);
    }

    int crit_node = -1;
    for (const int i : critical_) {
      const int diff = fwd.tape.sub(adv_taps.at(i), fwd.tap_ids.at(i));
      const int mean_norm = fwd.tape.mean_all(fwd.tape.batch_l2norm(diff));
      crit_node = crit_node < 0 ? mean_norm : fwd.tape.add(crit_node, mean_norm);
    }
    const int total = fwd.tape.add(ce_node, fwd.tape.scale(crit_node, cfg_.lambda));

    const double ce = fwd.tape.value(ce_node)[0];
    const double crit = fwd.tape.value(crit_node)[0];
    const BackwardResult back = fwd.tape.backward(total);
    sgd_step(net_, net_.gradients(fwd, back, request), opt_, lr, cfg_.momentum);

    ce_sum += ce * static_cast<double>(batch.size());
    crit_sum += crit * static_cast<double>(batch.size());
    seen += static_cast<int64_t>(batch.size());
    if (on_step) on_step(net_, StepRecord{epoch, ++step, ce, crit, fwd.tape.value(total)[0]});
  }
  ++completed_;
  return finish_epoch(Phase::clat, ce_sum / static_cast<double>(seen), crit_sum / static_cast<double>(seen));
}

void Trainer::reselect() {
  const int epoch = completed_ + 1;
  Rng pick(derive_seed(cfg_.seed, "crit-pick", static_cast<uint64_t>(epoch)));
  std::vector<int> idx(static_cast<size_t>(train_.size()));
  std::iota(idx.begin(), idx.end(), 0);
  pick.shuffle(idx);
  idx.resize(static_cast<size_t>(std::min(cfg_.criticality_batch, train_.size())));
  auto [x, y] = train_.gather(idx);

  Rng attack_rng(derive_seed(cfg_.seed, "crit-attack", static_cast<uint64_t>(epoch)));
  CriticalityReport report = criticality_indices(net_, x, y, cfg_.attack, attack_rng);
  report.seed = cfg_.seed;
  std::vector<int> next = select_topk(report, cfg_.effective_k(net_.layer_count()));
  report.selected = next;

  for (const int old : critical_) {
    if (std::find(next.begin(), next.end(), old) == next.end()) opt_.clear_layer(old);
  }
  critical_ = next;
  net_.set_freeze_mask(critical_);
  ++reselects_;
  if (on_reselect) on_reselect(net_, report, critical_);
}

std::vector<EpochMetrics> Trainer::run(int until_epoch) {
  const int limit = until_epoch == 0 ? cfg_.total_epochs : std::min(until_epoch, cfg_.total_epochs);
  std::vector<EpochMetrics> out;
  while (completed_ < limit) {
    const int epoch = completed_ + 1;
    if (epoch <= cfg_.pretrain_epochs) {
      net_.unfreeze_all();
      out.push_back(pgd_at_epoch());
      continue;
    }
    const int clat_epoch_index = epoch - cfg_.pretrain_epochs;  // 1-based
    const bool first = critical_.empty();
    const bool periodic =
        cfg_.dynamic_selection && (clat_epoch_index - 1) % cfg_.reselect_period == 0;
    if (first || periodic) {
      reselect();
    } else {
      net_.set_freeze_mask(critical_);
    }
    out.push_back(this->clat_epoch());
  }
  return out;
}

TrainState Trainer::state() const {
  TrainState s;
  s.completed_epochs = completed_;
  s.seed = cfg_.seed;
  s.critical = critical_;
  s.vel_w = opt_.vel_w;
  s.vel_b = opt_.vel_b;
  return s;
}

void Trainer::restore(const TrainState& s) {
  completed_ = s.completed_epochs;
  critical_ = s.critical;
  if (!s.vel_w.empty()) {
    opt_.vel_w = s.vel_w;
    opt_.vel_b = s.vel_b;
  }
  if (!critical_.empty()) net_.set_freeze_mask(critical_);
}

}  // namespace clat
