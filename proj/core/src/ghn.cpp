#include "ghnsearch/ghn.hpp"

#include <algorithm>
#include <cmath>

#include "ghnsearch/ops.hpp"

namespace ghn {

GhnConfig GhnConfig::defaults(GraphMode mode) {
  GhnConfig c;
  c.mode = mode;
  c.max_kernel = mode == GraphMode::kAnytime ? 5 : 7;
  return c;
}

int GhnConfig::onehot_dims() const {
  if (mode == GraphMode::kAnytime) {
    return static_cast<int>(space_ops(SearchSpace::kAnytime).size()) + 3 + 2;
  }
  return static_cast<int>(space_ops(SearchSpace::kStandard).size());
}

GhnModel GhnModel::init(const GhnConfig& config, uint64_t seed) {
  GhnModel m;
  m.config = config;
  Rng rng = Rng::derive(seed, 0x6417);
  const int d = config.hidden;
  m.embed = fan_in_uniform({config.onehot_dims(), d}, d, rng);
  m.gru = GruParams::init(d, rng);
  m.msg = Mlp::init(d, config.msg_hidden, d, rng);
  m.hyper = Mlp::init(d + 4, config.hyper_hidden, config.slab_size(), rng,
                      config.hyper_out_scale);
  if (config.mode == GraphMode::kAnytime) {
    m.edge_hyper = Mlp::init(2 * d + 4, config.hyper_hidden,
                             config.channel_tile * config.channel_tile, rng,
                             config.hyper_out_scale);
  }
  return m;
}

ParamSet GhnModel::params() const {
  ParamSet p;
  p.add("embed", embed);
  p.merge(gru.params("gru"));
  p.merge(msg.params("msg"));
  p.merge(hyper.params("hyper"));
  if (config.mode == GraphMode::kAnytime) p.merge(edge_hyper.params("edge"));
  return p;
}

int EmbeddingState::index_of(int node_id) const {
  for (size_t i = 0; i < node_ids.size(); ++i) {
    if (node_ids[i] == node_id) return static_cast<int>(i);
  }
  throw GraphError("embedding state has no node " + std::to_string(node_id));
}

namespace {

void check_alignment(const ArchGraph& g, const EmbeddingState& state) {
  if (state.h.size() != g.nodes.size()) {
    throw GraphError("embedding state size " + std::to_string(state.h.size()) +
                     " does not match node count " + std::to_string(g.nodes.size()));
  }
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    if (state.node_ids[i] != g.nodes[i].id) {
      throw GraphError("embedding state misaligned at index " + std::to_string(i));
    }
  }
}

void check_finite(const EmbeddingState& state) {
  for (const Tensor& t : state.h) {
    if (!t.all_finite()) throw NumericError("non-finite node embedding after update");
  }
}

Tensor embed_row(const GhnModel& model, int row) {
  return slice(model.embed, 0, row, 1);  // [1, D]
}

int op_index(GraphMode mode, OpKind op) {
  const auto& ops =
      space_ops(mode == GraphMode::kAnytime ? SearchSpace::kAnytime : SearchSpace::kStandard);
  const auto it = std::find(ops.begin(), ops.end(), op);
  if (it == ops.end()) {
    throw ConfigError("operator " + op_name(op) + " not representable in this mode");
  }
  return static_cast<int>(it - ops.begin());
}

int scale_index(Scale s) {
  switch (s) {
    case Scale::kFull: return 0;
    case Scale::kHalf: return 1;
    case Scale::kQuarter: return 2;
  }
  throw ConfigError("bad scale");
}

bool lex_less(const Tensor& a, const Tensor& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.numel(), b.data(),
                                      b.data() + b.numel());
}

/// Fold a set of message vectors in a content-sorted order, which makes the
/// floating-point sum independent of node numbering (bit-exact equivariance).
Tensor fold_messages(std::vector<Tensor> msgs, int64_t d) {
  if (msgs.empty()) return Tensor(Shape{1, d});
  std::sort(msgs.begin(), msgs.end(), lex_less);
  Tensor acc = msgs[0];
  for (size_t i = 1; i < msgs.size(); ++i) acc = add(acc, msgs[i]);
  return acc;
}

struct HandoffContext {
  Tensor message;  // M(graph embedding of the previous block), [1, D]
  bool every_step = true;
};

Tensor node_message(const ArchGraph& g, const EmbeddingState& state, const GhnModel& model,
                    int node_id, const std::optional<HandoffContext>& handoff,
                    const std::vector<int>& update_counts) {
  std::vector<Tensor> msgs;
  for (int u : g.in_neighbors(node_id)) {
    msgs.push_back(model.msg.forward(state.h[static_cast<size_t>(state.index_of(u))]));
  }
  if (handoff && g.is_input(node_id)) {
    const int idx = state.index_of(node_id);
    if (handoff->every_step || update_counts[static_cast<size_t>(idx)] == 0) {
      msgs.push_back(handoff->message);
    }
  }
  return fold_messages(std::move(msgs), model.config.hidden);
}

void step_synchronous_impl(const ArchGraph& g, EmbeddingState& state, const GhnModel& model,
                           const std::optional<HandoffContext>& handoff,
                           std::vector<int>& update_counts) {
  check_alignment(g, state);
  std::vector<Tensor> messages(g.nodes.size());
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    messages[i] = node_message(g, state, model, g.nodes[i].id, handoff, update_counts);
  }
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    state.h[i] = gru_cell(state.h[i], messages[i], model.gru);
    update_counts[i] += 1;
  }
  state.node_updates += static_cast<int64_t>(g.nodes.size());
  check_finite(state);
}

void step_forward_backward_impl(const ArchGraph& g, EmbeddingState& state, const GhnModel& model,
                                const std::optional<HandoffContext>& handoff,
                                std::vector<int>& update_counts) {
  check_alignment(g, state);
  const std::vector<int> order = topological_sort(g);
  auto update = [&](int node_id) {
    const size_t i = static_cast<size_t>(state.index_of(node_id));
    Tensor m = node_message(g, state, model, node_id, handoff, update_counts);
    state.h[i] = gru_cell(state.h[i], m, model.gru);
    update_counts[i] += 1;
    state.node_updates += 1;
  };
  for (int id : order) update(id);
  for (size_t i = order.size() - 1; i-- > 0;) update(order[i]);
  check_finite(state);
}

EmbeddingState propagate_impl(const ArchGraph& g, const GhnModel& model,
                              const PropagationScheme& scheme,
                              const std::optional<HandoffContext>& handoff) {
  EmbeddingState state = init_embeddings(g, model);
  std::vector<int> update_counts(g.nodes.size(), 0);
  if (scheme.steps < 0) throw InputError("propagation steps must be >= 0");
  for (int t = 0; t < scheme.steps; ++t) {
    if (scheme.kind == SchemeKind::kSynchronous) {
      step_synchronous_impl(g, state, model, handoff, update_counts);
    } else {
      step_forward_backward_impl(g, state, model, handoff, update_counts);
    }
  }
  return state;
}

}  // namespace

EmbeddingState init_embeddings(const ArchGraph& g, const GhnModel& model) {
  const bool graph_anytime = g.mode == GraphMode::kAnytime;
  const bool model_anytime = model.config.mode == GraphMode::kAnytime;
  if (graph_anytime != model_anytime) {
    throw ConfigError("graph mode does not match model mode");
  }
  EmbeddingState state;
  const int ops_count = static_cast<int>(
      space_ops(model_anytime ? SearchSpace::kAnytime : SearchSpace::kStandard).size());
  for (const ArchNode& n : g.nodes) {
    Tensor h = embed_row(model, op_index(model.config.mode, n.op));
    if (model_anytime) {
      if (!n.anytime) throw ConfigError("anytime graph node missing attributes");
      h = add(h, embed_row(model, ops_count + scale_index(n.anytime->scale)));
      h = add(h, embed_row(model, ops_count + 3 + (n.anytime->early_exit ? 1 : 0)));
    }
    state.h.push_back(h);
    state.node_ids.push_back(n.id);
  }
  return state;
}

void step_synchronous(const ArchGraph& g, EmbeddingState& state, const GhnModel& model) {
  std::vector<int> counts(g.nodes.size(), 1);
  step_synchronous_impl(g, state, model, std::nullopt, counts);
}

void step_forward_backward(const ArchGraph& g, EmbeddingState& state, const GhnModel& model) {
  std::vector<int> counts(g.nodes.size(), 1);
  step_forward_backward_impl(g, state, model, std::nullopt, counts);
}

EmbeddingState propagate(const ArchGraph& g, const GhnModel& model,
                         const PropagationScheme& scheme) {
  return propagate_impl(g, model, scheme, std::nullopt);
}

Tensor graph_embedding(const EmbeddingState& state) {
  if (state.h.empty()) throw InputError("graph_embedding: empty state");
  std::vector<Tensor> rows = state.h;
  std::sort(rows.begin(), rows.end(), lex_less);
  Tensor acc = rows[0];
  for (size_t i = 1; i < rows.size(); ++i) acc = add(acc, rows[i]);
  return scale(acc, 1.0 / static_cast<double>(rows.size()));
}

std::vector<EmbeddingState> propagate_stacked(std::span<const ArchGraph* const> blocks,
                                              std::span<const GhnModel* const> models,
                                              const PropagationScheme& scheme,
                                              bool pass_embeddings) {
  if (blocks.empty()) throw InputError("propagate_stacked: need at least one block");
  if (models.size() != 1 && models.size() != blocks.size()) {
    throw ConfigError("propagate_stacked: need one shared model or one per block");
  }
  std::vector<EmbeddingState> states;
  Tensor carry(Shape{1, models[0]->config.hidden});  // h for block 0 is zero
  for (size_t i = 0; i < blocks.size(); ++i) {
    const GhnModel& model = models.size() == 1 ? *models[0] : *models[i];
    std::optional<HandoffContext> handoff;
    if (pass_embeddings) {
      handoff = HandoffContext{model.msg.forward(carry), model.config.handoff_every_step};
    }
    states.push_back(propagate_impl(*blocks[i], model, scheme, handoff));
    if (pass_embeddings) carry = graph_embedding(states.back());
  }
  return states;
}

// ---------------------------------------------------------------------------
// weight generation
// ---------------------------------------------------------------------------

namespace {

// Suffix distinguishing repeated hypernet calls: 2 role dims + tile position.
Tensor call_suffix(int role_a, int role_b, int ti, int tj) {
  return Tensor(Shape{1, 4},
                {static_cast<double>(role_a), static_cast<double>(role_b),
                 static_cast<double>(ti + 1) * 0.25, static_cast<double>(tj + 1) * 0.25});
}

struct RoleCode {
  int a, b;
};

RoleCode role_code(WeightRole role) {
  switch (role) {
    case WeightRole::kKernel: return {0, 0};
    case WeightRole::kKernelSecond: return {1, 0};
    case WeightRole::kAffineScale:
    case WeightRole::kAffineBias: return {0, 1};
    case WeightRole::kExitClassifier: return {1, 1};
  }
  throw ConfigError("bad weight role");
}

// One hypernet slab reshaped to [tile, tile, K, K].
Tensor hyper_slab(const GhnModel& model, const Tensor& h, WeightRole role, int ti, int tj) {
  const RoleCode rc = role_code(role);
  Tensor input = concat({h, call_suffix(rc.a, rc.b, ti, tj)}, 1);
  Tensor flat = model.hyper.forward(input);
  const int64_t tile = model.config.channel_tile, k = model.config.max_kernel;
  return reshape(flat, Shape{tile, tile, k, k});
}

// Dense kernel [cout, cin, kh, kw] via tiling plus a centered spatial slice.
// `gain` sets the emitted scale (2/fan_in for hidden kernels; classifier
// projections start cool so initial losses sit near ln(C) instead of deep in
// softmax saturation).
Tensor gen_kernel(const GhnModel& model, const Tensor& h, WeightRole role, int cout, int cin,
                  int kh, int kw, double gain = 2.0) {
  if (cout < 1 || cin < 1) {
    throw ConfigError("generate_weights: channel counts must be >= 1, got " +
                      std::to_string(cout) + "x" + std::to_string(cin));
  }
  const int tile = model.config.channel_tile, kmax = model.config.max_kernel;
  if (kh > kmax || kw > kmax) {
    throw ConfigError("generate_weights: kernel " + std::to_string(kh) + "x" +
                      std::to_string(kw) + " exceeds slab extent " + std::to_string(kmax));
  }
  const int tiles_i = (cout + tile - 1) / tile;
  const int tiles_j = (cin + tile - 1) / tile;
  std::vector<Tensor> rows;
  for (int ti = 0; ti < tiles_i; ++ti) {
    std::vector<Tensor> cols;
    for (int tj = 0; tj < tiles_j; ++tj) {
      Tensor slab = hyper_slab(model, h, role, ti, tj);
      slab = slice(slab, 2, (kmax - kh) / 2, kh);
      slab = slice(slab, 3, (kmax - kw) / 2, kw);
      cols.push_back(slab);
    }
    Tensor row = cols.size() == 1 ? cols[0] : concat(cols, 1);
    if (row.dim(1) > cin) row = slice(row, 1, 0, cin);
    rows.push_back(row);
  }
  Tensor kernel = rows.size() == 1 ? rows[0] : concat(rows, 0);
  if (kernel.dim(0) > cout) kernel = slice(kernel, 0, 0, cout);
  const int64_t fan_in = kernel.numel() / kernel.dim(0);
  return rms_scale(kernel, std::sqrt(gain / static_cast<double>(fan_in)));
}

constexpr double kClassifierGain = 0.05;

// Depthwise kernel [c, 1, k, k]: tile over channels, single input slice.
Tensor gen_depthwise(const GhnModel& model, const Tensor& h, int c, int k) {
  const int tile = model.config.channel_tile, kmax = model.config.max_kernel;
  const int tiles = (c + tile - 1) / tile;
  std::vector<Tensor> parts;
  for (int ti = 0; ti < tiles; ++ti) {
    Tensor slab = hyper_slab(model, h, WeightRole::kKernel, ti, 0);
    slab = slice(slab, 1, 0, 1);
    slab = slice(slab, 2, (kmax - k) / 2, k);
    slab = slice(slab, 3, (kmax - k) / 2, k);
    parts.push_back(slab);
  }
  Tensor kernel = parts.size() == 1 ? parts[0] : concat(parts, 0);
  if (kernel.dim(0) > c) kernel = slice(kernel, 0, 0, c);
  return rms_scale(kernel, std::sqrt(2.0 / static_cast<double>(k * k)));
}

// Per-channel affine: scale (around 1) and bias from the slab prefix.
std::pair<Tensor, Tensor> gen_affine(const GhnModel& model, const Tensor& h, int c) {
  const int tile = model.config.channel_tile;
  const int tiles = (c + tile - 1) / tile;
  std::vector<Tensor> scales, biases;
  for (int ti = 0; ti < tiles; ++ti) {
    const RoleCode rc = role_code(WeightRole::kAffineScale);
    Tensor input = concat({h, call_suffix(rc.a, rc.b, ti, 0)}, 1);
    Tensor flat = model.hyper.forward(input);  // [1, slab_size]
    scales.push_back(reshape(slice(flat, 1, 0, tile), Shape{tile}));
    biases.push_back(reshape(slice(flat, 1, tile, tile), Shape{tile}));
  }
  Tensor s = scales.size() == 1 ? scales[0] : concat(scales, 0);
  Tensor b = biases.size() == 1 ? biases[0] : concat(biases, 0);
  if (s.dim(0) > c) {
    s = slice(s, 0, 0, c);
    b = slice(b, 0, 0, c);
  }
  return {add_scalar(s, 1.0), b};  // scale parameterized around identity
}

}  // namespace

ModuleWeights generate_weights(const ModulePlan& plan, const EmbeddingState& state,
                               const GhnModel& model, bool is_head) {
  check_alignment(plan.graph, state);
  ModuleWeights out;
  const bool anytime = model.config.mode == GraphMode::kAnytime;

  for (size_t i = 0; i < plan.graph.nodes.size(); ++i) {
    const ArchNode& n = plan.graph.nodes[i];
    const NodePlan& np = plan.nodes[i];
    const Tensor& h = state.h[i];
    std::vector<TaggedTensor> items;

    if (op_has_params(n.op)) {
      switch (n.op) {
        case OpKind::kConv1x1:
          items.push_back({WeightRole::kKernel,
                           gen_kernel(model, h, WeightRole::kKernel, np.c_out, np.c_in, 1, 1,
                                      is_head ? kClassifierGain : 2.0)});
          break;
        case OpKind::kConv3x3:
        case OpKind::kConv5x5: {
          const int k = op_kernel_extent(n.op);
          items.push_back({WeightRole::kKernel,
                           gen_kernel(model, h, WeightRole::kKernel, np.c_out, np.c_in, k, k)});
          break;
        }
        case OpKind::kSepConv3x3:
        case OpKind::kSepConv5x5:
        case OpKind::kDilSepConv3x3:
        case OpKind::kDilSepConv5x5: {
          const int k = op_kernel_extent(n.op);
          items.push_back({WeightRole::kKernel, gen_depthwise(model, h, np.c_in, k)});
          items.push_back(
              {WeightRole::kKernelSecond,
               gen_kernel(model, h, WeightRole::kKernelSecond, np.c_out, np.c_in, 1, 1)});
          break;
        }
        case OpKind::kConv1x7_7x1:
          items.push_back({WeightRole::kKernel,
                           gen_kernel(model, h, WeightRole::kKernel, np.c_out, np.c_in, 1, 7)});
          items.push_back(
              {WeightRole::kKernelSecond,
               gen_kernel(model, h, WeightRole::kKernelSecond, np.c_out, np.c_out, 7, 1)});
          break;
        default:
          break;
      }
      if (!is_head) {
        auto [s, b] = gen_affine(model, h, np.c_out);
        items.push_back({WeightRole::kAffineScale, s});
        items.push_back({WeightRole::kAffineBias, b});
      }
    }
    if (np.exit_classes > 0) {
      // exit head projects pooled features to class logits
      items.push_back({WeightRole::kExitClassifier,
                       gen_kernel(model, h, WeightRole::kExitClassifier, np.exit_classes,
                                  np.c_out, 1, 1, kClassifierGain)});
    }
    out.by_node[n.id] = std::move(items);
  }

  if (anytime) {
    for (size_t i = 0; i < plan.graph.nodes.size(); ++i) {
      const NodePlan& np = plan.nodes[i];
      if (np.bottleneck_in > 0) {
        out.bottleneck[np.id] = generate_bottleneck_from_edges(
            plan.graph, state, model, np.id, np.c_out, np.c_out);
      }
    }
  }
  return out;
}

Tensor generate_bottleneck_from_edges(const ArchGraph& g, const EmbeddingState& state,
                                      const GhnModel& model, int dst_node, int c_out,
                                      int c_per_edge) {
  if (model.config.mode != GraphMode::kAnytime || g.mode != GraphMode::kAnytime) {
    throw ModeError("edge-generated bottlenecks exist only in anytime mode");
  }
  check_alignment(g, state);
  const int tile = model.config.channel_tile;
  std::vector<Tensor> slabs;
  for (const auto& [src, dst] : g.edges) {
    if (dst != dst_node) continue;
    const Tensor& hu = state.h[static_cast<size_t>(state.index_of(src))];
    const Tensor& hv = state.h[static_cast<size_t>(state.index_of(dst))];
    Tensor edge_act = concat({hu, hv}, 1);  // parent then child

    const int tiles_i = (c_out + tile - 1) / tile;
    const int tiles_j = (c_per_edge + tile - 1) / tile;
    std::vector<Tensor> rows;
    for (int ti = 0; ti < tiles_i; ++ti) {
      std::vector<Tensor> cols;
      for (int tj = 0; tj < tiles_j; ++tj) {
        Tensor input = concat({edge_act, call_suffix(0, 0, ti, tj)}, 1);
        cols.push_back(reshape(model.edge_hyper.forward(input), Shape{tile, tile}));
      }
      Tensor row = cols.size() == 1 ? cols[0] : concat(cols, 1);
      if (row.dim(1) > c_per_edge) row = slice(row, 1, 0, c_per_edge);
      rows.push_back(row);
    }
    Tensor slab = rows.size() == 1 ? rows[0] : concat(rows, 0);
    if (slab.dim(0) > c_out) slab = slice(slab, 0, 0, c_out);
    slabs.push_back(slab);
  }
  if (slabs.empty()) {
    throw GraphError("generate_bottleneck_from_edges: node " + std::to_string(dst_node) +
                     " has no incoming edges");
  }
  Tensor joined = slabs.size() == 1 ? slabs[0] : concat(slabs, 1);
  joined = rms_scale(joined, std::sqrt(2.0 / static_cast<double>(joined.dim(1))));
  return reshape(joined, Shape{joined.dim(0), joined.dim(1), 1, 1});
}

}  // namespace ghn
