#include "clat/attacks.hpp"

#include <cmath>

#include "clat/error.hpp"

namespace clat {

namespace {

// Clamps x+delta into the input domain, in place on delta.
void clamp_to_domain(Tensor& delta, const Tensor& x, const AttackConfig& cfg) {
  float* dp = delta.data();
  const float* xp = x.data();
  for (int64_t i = 0; i < delta.numel(); ++i) {
    const float v = xp[i] + dp[i];
    if (v < cfg.domain_lo) dp[i] = cfg.domain_lo - xp[i];
    if (v > cfg.domain_hi) dp[i] = cfg.domain_hi - xp[i];
  }
}

// Projects delta onto the budget ball, then into the domain. Domain
// clamping moves coordinates toward 0, so it cannot re-violate the budget.
void project(Tensor& delta, const Tensor& x, const AttackConfig& cfg) {
  if (cfg.norm == AttackNorm::linf) {
    clamp_(delta, -cfg.epsilon, cfg.epsilon);
  } else {
    const int n = delta.dim(0);
    const int64_t per = delta.numel() / n;
    float* dp = delta.data();
    for (int s = 0; s < n; ++s) {
      float* row = dp + static_cast<int64_t>(s) * per;
      double acc = 0.0;
      for (int64_t i = 0; i < per; ++i) acc += static_cast<double>(row[i]) * row[i];
      const double norm = std::sqrt(acc);
      if (norm > cfg.epsilon && norm > 0.0) {
        const float scale = static_cast<float>(cfg.epsilon / norm);
        for (int64_t i = 0; i < per; ++i) row[i] *= scale;
      }
    }
  }
  clamp_to_domain(delta, x, cfg);
}

Tensor random_start_delta(const Tensor& x, const AttackConfig& cfg, Rng& rng) {
  if (!cfg.random_start || cfg.epsilon <= 0.0f) return Tensor(x.shape());
  Tensor delta = Tensor::uniform(x.shape(), -cfg.epsilon, cfg.epsilon, rng);
  project(delta, x, cfg);
  return delta;
}

// Ascent step in the chosen geometry: sign step for linf, normalized
// gradient step for l2. Zero gradient moves nothing.
void ascend(Tensor& delta, const Tensor& grad, float step, AttackNorm norm) {
  if (norm == AttackNorm::linf) {
    const Tensor s = sign(grad);
    axpy_(delta, step, s);
  } else {
    const int n = delta.dim(0);
    const int64_t per = delta.numel() / n;
    const std::vector<double> norms = batch_l2_norms(grad);
    float* dp = delta.data();
    const float* gp = grad.data();
    for (int s = 0; s < n; ++s) {
      if (norms[static_cast<size_t>(s)] == 0.0) continue;
      const float scale = static_cast<float>(step / norms[static_cast<size_t>(s)]);
      float* drow = dp + static_cast<int64_t>(s) * per;
      const float* grow = gp + static_cast<int64_t>(s) * per;
      for (int64_t i = 0; i < per; ++i) drow[i] += scale * grow[i];
    }
  }
}

Tensor loss_input_grad(const Network& net, const Tensor& xadv, const std::vector<int>& y) {
  TapeForward fwd = net.forward_tape(xadv, {}, /*input_grad=*/true, /*param_grads=*/false);
  const int loss = fwd.tape.softmax_cross_entropy(fwd.logits_id, y);
  const BackwardResult back = fwd.tape.backward(loss);
  return back.at(fwd.input_id);
}

}  // namespace

void AttackConfig::validate() const {
  if (epsilon < 0.0f || alpha <= 0.0f || steps < 1) {
    throw ConfigError("attack config requires epsilon >= 0, alpha > 0, steps >= 1");
  }
  if (domain_lo >= domain_hi) throw ConfigError("attack input domain is empty");
}

Tensor fgsm(const Network& net, const Tensor& x, const std::vector<int>& y,
            const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.epsilon == 0.0f) return Tensor(x.shape());
  Tensor eta = random_start_delta(x, cfg, rng);
  const Tensor grad = loss_input_grad(net, x + eta, y);
  Tensor delta = sign(grad);
  float* dp = delta.data();
  for (int64_t i = 0; i < delta.numel(); ++i) dp[i] *= cfg.epsilon;
  project(delta, x, cfg);
  return delta;
}

Tensor pgd_untargeted(const Network& net, const Tensor& x, const std::vector<int>& y,
                      const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.epsilon == 0.0f) return Tensor(x.shape());
  Tensor delta = random_start_delta(x, cfg, rng);
  for (int step = 0; step < cfg.steps; ++step) {
    const Tensor grad = loss_input_grad(net, x + delta, y);
    ascend(delta, grad, cfg.alpha, cfg.norm);
    project(delta, x, cfg);
  }
  return delta;
}

std::vector<double> feature_deviation_objective(const Network& net, const Tensor& x,
                                                const Tensor& delta,
                                                const std::vector<int>& critical) {
  const std::set<int> taps(critical.begin(), critical.end());
  const auto [clean_logits, clean] = net.forward_with_taps(x, taps);
  (void)clean_logits;
  const auto [adv_logits, adv] = net.forward_with_taps(x + delta, taps);
  (void)adv_logits;
  std::vector<double> obj(static_cast<size_t>(x.dim(0)), 0.0);
  for (const int i : critical) {
    const std::vector<double> norms = batch_l2_norms(adv.features.at(i) - clean.features.at(i));
    for (size_t s = 0; s < obj.size(); ++s) obj[s] += norms[s];
  }
  return obj;
}

Tensor feature_deviation_pgd(const Network& net, const Tensor& x, const std::vector<int>& critical,
                             const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  if (critical.empty()) throw UsageError("feature_deviation_pgd requires a non-empty critical set");
  const std::set<int> taps(critical.begin(), critical.end());
  if (cfg.epsilon == 0.0f) return Tensor(x.shape());

  // Clean features are constants of the inner maximization.
  const auto [clean_logits, clean] = net.forward_with_taps(x, taps);
  (void)clean_logits;

  const int n = x.dim(0);
  const int64_t per = x.numel() / n;
  Tensor delta = random_start_delta(x, cfg, rng);
  Tensor best = delta;
  std::vector<double> best_obj(static_cast<size_t>(n), -1.0);

  auto track_best = [&](const Tensor& cand, const std::vector<double>& obj) {
    for (int s = 0; s < n; ++s) {
      if (obj[static_cast<size_t>(s)] > best_obj[static_cast<size_t>(s)]) {
        best_obj[static_cast<size_t>(s)] = obj[static_cast<size_t>(s)];
        std::copy(cand.data() + static_cast<int64_t>(s) * per,
                  cand.data() + static_cast<int64_t>(s + 1) * per,
                  best.data() + static_cast<int64_t>(s) * per);
      }
    }
  };

  for (int step = 0; step <= cfg.steps; ++step) {
    TapeForward fwd = net.forward_tape(x + delta, taps, /*input_grad=*/true, /*param_grads=*/false);
    int objective = -1;
    std::vector<double> obj(static_cast<size_t>(n), 0.0);
    for (const int i : critical) {
      const int diff = fwd.tape.sub(fwd.tap_ids.at(i), fwd.tape.leaf(clean.features.at(i)));
      const int norms = fwd.tape.batch_l2norm(diff);
      const Tensor& nv = fwd.tape.value(norms);
      for (int s = 0; s < n; ++s) obj[static_cast<size_t>(s)] += nv[s];
      const int summed = fwd.tape.sum_all(norms);
      objective = objective < 0 ? summed : fwd.tape.add(objective, summed);
    }
    track_best(delta, obj);
    if (step == cfg.steps) break;
    const BackwardResult back = fwd.tape.backward(objective);
    ascend(delta, back.at(fwd.input_id), cfg.alpha, cfg.norm);
    project(delta, x, cfg);
  }
  return best;
}

}  // namespace clat
