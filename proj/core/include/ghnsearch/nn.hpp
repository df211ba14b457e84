#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ghnsearch/ops.hpp"
#include "ghnsearch/rng.hpp"
#include "ghnsearch/tensor.hpp"

namespace ghn {

/// Ordered collection of named parameter tensors. Entries alias the owning
/// module's storage, so optimizer updates are visible in place.
class ParamSet {
 public:
  void add(const std::string& name, Tensor t);
  void merge(const ParamSet& other, const std::string& prefix = "");
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  Tensor* find(const std::string& name);
  int64_t total_size() const;
  void zero_grad();
  void set_requires_grad(bool v);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Two-layer perceptron with ReLU hidden activation.
struct Mlp {
  Tensor w1, b1, w2, b2;

  static Mlp init(int64_t in, int64_t hidden, int64_t out, Rng& rng, double out_weight_scale = 1.0);
  Tensor forward(const Tensor& x) const;  // x: [N, in]
  ParamSet params(const std::string& prefix) const;
};

/// Gated recurrent unit acting on row vectors.
struct GruParams {
  Tensor w_z, w_r, w_h;  // [2D, D]
  Tensor b_z, b_r, b_h;  // [D]

  static GruParams init(int64_t hidden, Rng& rng);
  ParamSet params(const std::string& prefix) const;
};

/// h' = (1-z) . h + z . tanh(W_h [r.h, m] + b_h), with update gate
/// z = sigmoid(W_z [h,m] + b_z) and reset gate r = sigmoid(W_r [h,m] + b_r).
/// h and m are [N, D]; rows are independent.
Tensor gru_cell(const Tensor& h, const Tensor& m, const GruParams& p);

/// Uniform init in +-sqrt(1/fan_in).
Tensor fan_in_uniform(Shape shape, int64_t fan_in, Rng& rng, double gain = 1.0);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter first/second moment buffers plus the shared step counter.
struct AdamState {
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> slots;
  int64_t step = 0;
};

/// One Adam update over every parameter that has an allocated gradient.
/// Bias-corrected; increments the step counter exactly once per call.
/// Throws OptimizerError (carrying the parameter name) on non-finite
/// gradients.
void adam_step(ParamSet& params, AdamState& state, const AdamConfig& cfg);

}  // namespace ghn
