#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace clat {

/// Deterministic random source. Built on std::mt19937_64 (whose output
/// sequence is fixed by the standard) with hand-rolled distributions, so
/// that identical seeds give bit-identical streams on every platform and
/// compiler. Never use std:: distributions here: their output is
/// implementation defined.
class Rng {
public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform float in [lo, hi). Uses the top 24 bits of the stream.
  float uniform(float lo, float hi) {
    const uint32_t bits = static_cast<uint32_t>(next_u64() >> 40);  // 24 bits
    const float u = static_cast<float>(bits) * (1.0f / 16777216.0f);
    return lo + (hi - lo) * u;
  }

  /// Uniform integer in [0, n). n must be positive.
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

  /// Fisher-Yates shuffle with a fixed visiting order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 gen_;
};

/// Derives an independent stream seed from a master seed, a purpose tag
/// and an index (splitmix64 over an FNV-1a hash of the tag). Stateless:
/// epoch-indexed streams make checkpoint resume trivially deterministic.
uint64_t derive_seed(uint64_t master, std::string_view purpose, uint64_t index);

}  // namespace clat
