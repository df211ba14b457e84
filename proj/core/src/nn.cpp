#include "ghnsearch/nn.hpp"

#include <cmath>

namespace ghn {

void ParamSet::add(const std::string& name, Tensor t) {
  for (const auto& [existing, _] : entries_) {
    if (existing == name) throw ConfigError("duplicate parameter name: " + name);
  }
  entries_.emplace_back(name, std::move(t));
}

void ParamSet::merge(const ParamSet& other, const std::string& prefix) {
  for (const auto& [name, t] : other.entries_) add(prefix + name, t);
}

Tensor* ParamSet::find(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return &t;
  }
  return nullptr;
}

int64_t ParamSet::total_size() const {
  int64_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParamSet::set_requires_grad(bool v) {
  for (auto& [_, t] : entries_) t.set_requires_grad(v);
}

Tensor fan_in_uniform(Shape shape, int64_t fan_in, Rng& rng, double gain) {
  Tensor t(shape);
  const double bound = gain * std::sqrt(1.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

Mlp Mlp::init(int64_t in, int64_t hidden, int64_t out, Rng& rng, double out_weight_scale) {
  Mlp m;
  m.w1 = fan_in_uniform({in, hidden}, in, rng);
  m.b1 = Tensor(Shape{hidden});
  m.w2 = fan_in_uniform({hidden, out}, hidden, rng, out_weight_scale);
  m.b2 = Tensor(Shape{out});
  return m;
}

Tensor Mlp::forward(const Tensor& x) const {
  return linear(relu(linear(x, w1, b1)), w2, b2);
}

ParamSet Mlp::params(const std::string& prefix) const {
  ParamSet p;
  p.add(prefix + ".w1", w1);
  p.add(prefix + ".b1", b1);
  p.add(prefix + ".w2", w2);
  p.add(prefix + ".b2", b2);
  return p;
}

GruParams GruParams::init(int64_t hidden, Rng& rng) {
  GruParams g;
  g.w_z = fan_in_uniform({2 * hidden, hidden}, 2 * hidden, rng);
  g.w_r = fan_in_uniform({2 * hidden, hidden}, 2 * hidden, rng);
  g.w_h = fan_in_uniform({2 * hidden, hidden}, 2 * hidden, rng);
  g.b_z = Tensor(Shape{hidden});
  g.b_r = Tensor(Shape{hidden});
  g.b_h = Tensor(Shape{hidden});
  return g;
}

ParamSet GruParams::params(const std::string& prefix) const {
  ParamSet p;
  p.add(prefix + ".w_z", w_z);
  p.add(prefix + ".w_r", w_r);
  p.add(prefix + ".w_h", w_h);
  p.add(prefix + ".b_z", b_z);
  p.add(prefix + ".b_r", b_r);
  p.add(prefix + ".b_h", b_h);
  return p;
}

Tensor gru_cell(const Tensor& h, const Tensor& m, const GruParams& p) {
  if (h.rank() != 2 || m.rank() != 2 || h.shape() != m.shape() || h.dim(1) != p.w_z.dim(1)) {
    throw DimensionError("gru_cell: state " + shape_str(h.shape()) + " and message " +
                         shape_str(m.shape()) + " must both be [N,D] with D=" +
                         std::to_string(p.w_z.dim(1)));
  }
  Tensor hm = concat({h, m}, 1);
  Tensor z = sigmoid(linear(hm, p.w_z, p.b_z));
  Tensor r = sigmoid(linear(hm, p.w_r, p.b_r));
  Tensor rh_m = concat({mul(r, h), m}, 1);
  Tensor cand = tanh_act(linear(rh_m, p.w_h, p.b_h));
  // (1-z).h + z.cand
  return add(sub(h, mul(z, h)), mul(z, cand));
}

void adam_step(ParamSet& params, AdamState& state, const AdamConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, entry] : params.entries()) {
    Tensor t = entry;  // shared handle; updates hit the owning storage
    if (!t.has_grad()) continue;
    auto& mom = state.slots[name];
    const size_t n = static_cast<size_t>(t.numel());
    if (mom.m.size() != n) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    const std::vector<double>& g = t.grad();
    double* p = t.data();
    for (size_t i = 0; i < n; ++i) {
      if (!std::isfinite(g[i])) {
        throw OptimizerError("adam_step: non-finite gradient in parameter '" + name + "'", name);
      }
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g[i];
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace ghn
