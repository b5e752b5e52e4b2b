#pragma once

#include <vector>

#include "clat/network.hpp"
#include "clat/rng.hpp"
#include "clat/tensor.hpp"

namespace clat {

enum class AttackNorm : uint8_t { linf, l2 };

struct AttackConfig {
  float epsilon = 0.03f;  // perturbation budget in input units
  float alpha = 0.007f;   // per-step size
  int steps = 10;
  AttackNorm norm = AttackNorm::linf;
  bool random_start = true;
  float domain_lo = 0.0f;  // inputs live in [domain_lo, domain_hi]
  float domain_hi = 1.0f;

  void validate() const;  // epsilon >= 0, alpha > 0, steps >= 1
};

/// Single gradient-sign step of size epsilon, evaluated at an optional
/// random start. The returned delta is budget-feasible and keeps x+delta
/// inside the input domain.
Tensor fgsm(const Network& net, const Tensor& x, const std::vector<int>& y,
            const AttackConfig& cfg, Rng& rng);

/// Iterated projected ascent on the classification loss (untargeted).
/// Projection onto the budget ball and the input domain runs after every
/// step. Deterministic for a fixed rng state.
Tensor pgd_untargeted(const Network& net, const Tensor& x, const std::vector<int>& y,
                      const AttackConfig& cfg, Rng& rng);

/// Projected ascent on the summed feature deviation of the critical layers,
/// sum_{i in S} ||F_i(x+delta) - F_i(x)||_2 per sample, with the clean
/// features held fixed. Keeps the per-sample best iterate, so the returned
/// objective never falls below the start value.
Tensor feature_deviation_pgd(const Network& net, const Tensor& x, const std::vector<int>& critical,
                             const AttackConfig& cfg, Rng& rng);

/// Per-sample feature-deviation objective at a given delta (diagnostics
/// and tests).
std::vector<double> feature_deviation_objective(const Network& net, const Tensor& x,
                                                const Tensor& delta,
                                                const std::vector<int>& critical);

}  // namespace clat
