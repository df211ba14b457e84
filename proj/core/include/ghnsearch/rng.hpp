#pragma once

#include <cstdint>
#include <vector>

namespace ghn {

/// Deterministic splitmix64-based generator. Unlike the std distributions,
/// every draw is bit-reproducible across platforms and standard libraries,
/// which the checkpoint/report reproducibility contract depends on.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  /// Derive an independent stream from (seed, stream ids). Used to give each
  /// candidate / step / worker its own reproducible stream.
  static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0x9e3779b97f4a7c15ULL);

  uint64_t next_u64();

  /// Uniform integer in [0, bound). bound must be > 0.
  uint64_t next_below(uint64_t bound);

  /// Uniform double in [0, 1).
  double next_double();

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (consumes two uniforms per pair).
  double next_normal();

  /// Fisher-Yates shuffle of indices [0, n).
  std::vector<int> permutation(int n);

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ghn
