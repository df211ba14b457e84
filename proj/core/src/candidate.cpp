#include "ghnsearch/candidate.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ghnsearch/ops.hpp"

namespace ghn {

namespace {

const NodePlan& node_plan(const ModulePlan& m, int id) {
  for (const NodePlan& np : m.nodes) {
    if (np.id == id) return np;
  }
  throw GraphError("plan has no node " + std::to_string(id));
}

const Tensor* find_role(const std::vector<TaggedTensor>& items, WeightRole role) {
  for (const TaggedTensor& it : items) {
    if (it.role == role) return &it.tensor;
  }
  return nullptr;
}

std::string role_str(WeightRole role) {
  switch (role) {
    case WeightRole::kKernel: return "kernel";
    case WeightRole::kKernelSecond: return "kernel2";
    case WeightRole::kAffineScale: return "affine_scale";
    case WeightRole::kAffineBias: return "affine_bias";
    case WeightRole::kExitClassifier: return "exit";
  }
  return "?";
}

struct RoleSpec {
  WeightRole role;
  Shape shape;
};

// The exact tensors a node demands given its resolved plan.
std::vector<RoleSpec> required_roles(const NodePlan& np, bool is_input, bool is_head) {
  std::vector<RoleSpec> req;
  const int64_t ci = np.c_in, co = np.c_out;
  switch (np.op) {
    case OpKind::kIdentity:
    case OpKind::kMaxPool3x3:
    case OpKind::kAvgPool3x3:
      break;
    case OpKind::kConv1x1:
      req.push_back({WeightRole::kKernel, {co, ci, 1, 1}});
      break;
    case OpKind::kConv3x3:
    case OpKind::kConv5x5: {
      const int64_t k = op_kernel_extent(np.op);
      req.push_back({WeightRole::kKernel, {co, ci, k, k}});
      break;
    }
    case OpKind::kSepConv3x3:
    case OpKind::kSepConv5x5:
    case OpKind::kDilSepConv3x3:
    case OpKind::kDilSepConv5x5: {
      const int64_t k = op_kernel_extent(np.op);
      req.push_back({WeightRole::kKernel, {ci, 1, k, k}});
      req.push_back({WeightRole::kKernelSecond, {co, ci, 1, 1}});
      break;
    }
    case OpKind::kConv1x7_7x1:
      req.push_back({WeightRole::kKernel, {co, ci, 1, 7}});
      req.push_back({WeightRole::kKernelSecond, {co, co, 7, 1}});
      break;
  }
  if (op_has_params(np.op) && !is_head) {
    req.push_back({WeightRole::kAffineScale, {co}});
    req.push_back({WeightRole::kAffineBias, {co}});
  }
  if (np.exit_classes > 0) {
    req.push_back({WeightRole::kExitClassifier, {np.exit_classes, co, 1, 1}});
  }
  (void)is_input;
  return req;
}

int dilation_of(OpKind op) {
  return (op == OpKind::kDilSepConv3x3 || op == OpKind::kDilSepConv5x5) ? 2 : 1;
}

Tensor resample_scale(const Tensor& x, Scale from, Scale to) {
  const int f = static_cast<int>(from), t = static_cast<int>(to);
  if (t > f) return downsample_avg(x, t / f);
  if (f > t) return upsample_nearest(x, f / t);
  return x;
}

// Conv stage -> per-channel affine -> relu for parameterized ops; pools and
// identity pass through their windows untouched.
Tensor apply_op(const NodePlan& np, const Tensor& x, const std::vector<TaggedTensor>& items) {
  Tensor y;
  switch (np.op) {
    case OpKind::kIdentity:
      return x;
    case OpKind::kMaxPool3x3:
      return pool2d(x, PoolKind::kMax, 3, 1, 1);
    case OpKind::kAvgPool3x3:
      return pool2d(x, PoolKind::kAvg, 3, 1, 1);
    case OpKind::kConv1x1:
      y = conv2d(x, *find_role(items, WeightRole::kKernel));
      break;
    case OpKind::kConv3x3:
    case OpKind::kConv5x5: {
      Conv2dOpts opts;
      opts.padding = op_kernel_extent(np.op) / 2;
      y = conv2d(x, *find_role(items, WeightRole::kKernel), opts);
      break;
    }
    case OpKind::kSepConv3x3:
    case OpKind::kSepConv5x5:
    case OpKind::kDilSepConv3x3:
    case OpKind::kDilSepConv5x5:
      y = separable_conv2d(x, *find_role(items, WeightRole::kKernel),
                           *find_role(items, WeightRole::kKernelSecond), 1, dilation_of(np.op));
      break;
    case OpKind::kConv1x7_7x1: {
      Conv2dOpts row;
      row.padding = 0;
      row.padding_w = 3;
      y = conv2d(x, *find_role(items, WeightRole::kKernel), row);
      Conv2dOpts col;
      col.padding = 3;
      col.padding_w = 0;
      y = conv2d(y, *find_role(items, WeightRole::kKernelSecond), col);
      break;
    }
  }
  y = channel_affine(y, *find_role(items, WeightRole::kAffineScale),
                     *find_role(items, WeightRole::kAffineBias));
  return relu(y);
}

}  // namespace

CandidateNet assemble(NetworkPlan plan, std::vector<ModuleWeights> weights) {
  if (weights.size() != plan.modules.size()) {
    throw AssemblyError("assemble: " + std::to_string(weights.size()) + " weight bundles for " +
                        std::to_string(plan.modules.size()) + " modules");
  }
  for (size_t mi = 0; mi < plan.modules.size(); ++mi) {
    const ModulePlan& m = plan.modules[mi];
    const bool is_head = mi + 1 == plan.modules.size();
    for (const NodePlan& np : m.nodes) {
      const auto it = weights[mi].by_node.find(np.id);
      if (it == weights[mi].by_node.end()) {
        throw AssemblyError("assemble: missing weight bundle for module " + std::to_string(mi) +
                            " node " + std::to_string(np.id));
      }
      const auto& items = it->second;
      const auto req = required_roles(np, m.graph.is_input(np.id), is_head);
      for (const RoleSpec& rs : req) {
        const Tensor* t = find_role(items, rs.role);
        if (!t) {
          throw AssemblyError("assemble: node " + std::to_string(np.id) + " in module " +
                              std::to_string(mi) + " missing " + role_str(rs.role));
        }
        if (t->shape() != rs.shape) {
          throw AssemblyError("assemble: node " + std::to_string(np.id) + " " +
                              role_str(rs.role) + " has shape " + shape_str(t->shape()) +
                              ", expected " + shape_str(rs.shape));
        }
      }
      if (items.size() != req.size()) {
        throw AssemblyError("assemble: node " + std::to_string(np.id) + " carries " +
                            std::to_string(items.size()) + " tensors, expected " +
                            std::to_string(req.size()));
      }
      if (np.bottleneck_in > 0) {
        const auto bit = weights[mi].bottleneck.find(np.id);
        if (bit == weights[mi].bottleneck.end()) {
          throw AssemblyError("assemble: node " + std::to_string(np.id) +
                              " missing concat bottleneck");
        }
        const Shape expect{np.c_out, np.bottleneck_in, 1, 1};
        if (bit->second.shape() != expect) {
          throw AssemblyError("assemble: node " + std::to_string(np.id) + " bottleneck shape " +
                              shape_str(bit->second.shape()) + ", expected " + shape_str(expect));
        }
      }
    }
  }
  return CandidateNet{std::move(plan), std::move(weights)};
}

ForwardResult forward_candidate(const CandidateNet& net, const Tensor& images) {
  const NetworkPlan& plan = net.plan;
  if (images.rank() != 4 || images.dim(1) != plan.in_channels || images.dim(2) != plan.in_h ||
      images.dim(3) != plan.in_w) {
    throw DimensionError("forward_candidate: input " + shape_str(images.shape()) +
                         " does not match plan [B," + std::to_string(plan.in_channels) + "," +
                         std::to_string(plan.in_h) + "," + std::to_string(plan.in_w) + "]");
  }
  const int64_t batch = images.dim(0);
  const bool anytime = plan.mode == GraphMode::kAnytime;

  std::vector<Tensor> module_out(plan.modules.size());
  std::map<std::pair<int, int>, Tensor> exit_logits;  // (module, node) -> logits

  for (size_t mi = 0; mi < plan.modules.size(); ++mi) {
    const ModulePlan& m = plan.modules[mi];
    const bool is_head = mi + 1 == plan.modules.size();
    std::map<int, Tensor> acts;

    for (int id : m.topo_order) {
      const NodePlan& np = node_plan(m, id);
      const auto& items = net.weights[mi].by_node.at(id);
      Tensor y;

      if (m.graph.is_input(id)) {
        const auto pos = std::find(m.graph.input_ids.begin(), m.graph.input_ids.end(), id);
        const size_t j = static_cast<size_t>(pos - m.graph.input_ids.begin());
        const int src_idx = m.ext_source[j];
        Tensor src = src_idx < 0 ? images : module_out[static_cast<size_t>(src_idx)];

        if (is_head) {
          Tensor pooled = global_avg_pool(src);
          Tensor logits4 = conv2d(reshape(pooled, Shape{batch, src.dim(1), 1, 1}),
                                  *find_role(items, WeightRole::kKernel));
          module_out[mi] = reshape(logits4, Shape{batch, static_cast<int64_t>(np.c_out)});
          continue;
        }
        if (anytime) {
          const Scale src_scale =
              src_idx < 0 ? Scale::kFull : plan.modules[static_cast<size_t>(src_idx)].out_scale;
          src = resample_scale(src, src_scale, np.scale);
        } else if (m.ext_pool[j] > 1) {
          src = downsample_avg(src, m.ext_pool[j]);
        }
        Conv2dOpts opts;
        opts.stride = np.stride;
        y = conv2d(src, *find_role(items, WeightRole::kKernel), opts);
        y = relu(channel_affine(y, *find_role(items, WeightRole::kAffineScale),
                                *find_role(items, WeightRole::kAffineBias)));
      } else if (anytime) {
        // Gather in-edge activations (stored edge order), align scales,
        // concat channels, project through the edge-generated bottleneck.
        std::vector<Tensor> gathered;
        for (const auto& [src, dst] : m.graph.edges) {
          if (dst != id) continue;
          const NodePlan& sp = node_plan(m, src);
          gathered.push_back(resample_scale(acts.at(src), sp.scale, np.scale));
        }
        Tensor x = gathered.size() == 1 ? gathered[0] : concat(gathered, 1);
        x = relu(conv2d(x, net.weights[mi].bottleneck.at(id)));
        y = apply_op(np, x, items);
      } else {
        // Standard mode: the node's operator transforms each input
        // separately and the results are summed.
        Tensor acc;
        for (int u : m.graph.in_neighbors(id)) {
          Tensor t = apply_op(np, acts.at(u), items);
          acc = acc.defined() ? add(acc, t) : t;
        }
        y = acc;
      }

      acts[id] = y;
      if (np.exit_classes > 0) {
        Tensor pooled = global_avg_pool(y);
        Tensor logits4 = conv2d(reshape(pooled, Shape{batch, y.dim(1), 1, 1}),
                                *find_role(items, WeightRole::kExitClassifier));
        exit_logits[{static_cast<int>(mi), id}] =
            reshape(logits4, Shape{batch, np.exit_classes});
      }
    }

    if (!is_head) {
      std::vector<Tensor> parts;
      for (int leaf : m.graph.leaf_ids()) {
        Tensor t = acts.at(leaf);
        if (anytime) t = resample_scale(t, node_plan(m, leaf).scale, m.out_scale);
        parts.push_back(t);
      }
      module_out[mi] = parts.size() == 1 ? parts[0] : concat(parts, 1);
    }
  }

  ForwardResult result;
  result.logits = module_out.back();
  for (const ExitPoint& e : plan.exits) {
    const bool final_head = static_cast<size_t>(e.module) + 1 == plan.modules.size();
    result.exit_logits.push_back(final_head ? result.logits : exit_logits.at({e.module, e.node}));
  }
  return result;
}

LossResult forward_loss(const CandidateNet& net, const Batch& batch) {
  const ForwardResult fwd = forward_candidate(net, batch.images);
  LossResult loss;
  for (const Tensor& logits : fwd.exit_logits) {
    loss.per_exit.push_back(softmax_cross_entropy(logits, batch.labels));
  }
  if (net.plan.mode == GraphMode::kAnytime) {
    Tensor acc = loss.per_exit[0];
    for (size_t i = 1; i < loss.per_exit.size(); ++i) acc = add(acc, loss.per_exit[i]);
    loss.total = scale(acc, 1.0 / static_cast<double>(loss.per_exit.size()));
  } else {
    loss.total = loss.per_exit.back();
  }
  return loss;
}

std::vector<ModuleWeights> init_owned_weights(const NetworkPlan& plan, uint64_t seed) {
  std::vector<ModuleWeights> weights(plan.modules.size());
  for (size_t mi = 0; mi < plan.modules.size(); ++mi) {
    const ModulePlan& m = plan.modules[mi];
    const bool is_head = mi + 1 == plan.modules.size();
    for (const NodePlan& np : m.nodes) {
      Rng rng = Rng::derive(seed, 0x0eed ^ (mi << 8), static_cast<uint64_t>(np.id));
      std::vector<TaggedTensor> items;
      for (const RoleSpec& rs : required_roles(np, m.graph.is_input(np.id), is_head)) {
        Tensor t(rs.shape);
        if (rs.role == WeightRole::kAffineScale) {
          for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 1.0;
        } else if (rs.role == WeightRole::kAffineBias) {
          // zeros
        } else {
          int64_t fan_in = 1;
          for (size_t d = 1; d < rs.shape.size(); ++d) fan_in *= rs.shape[d];
          const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
          for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = std_dev * rng.next_normal();
        }
        items.push_back({rs.role, std::move(t)});
      }
      weights[mi].by_node[np.id] = std::move(items);
      if (np.bottleneck_in > 0) {
        Tensor t(Shape{np.c_out, np.bottleneck_in, 1, 1});
        const double std_dev = std::sqrt(2.0 / static_cast<double>(np.bottleneck_in));
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = std_dev * rng.next_normal();
        weights[mi].bottleneck[np.id] = std::move(t);
      }
    }
  }
  return weights;
}

ParamSet owned_params(const std::vector<ModuleWeights>& weights) {
  ParamSet p;
  for (size_t mi = 0; mi < weights.size(); ++mi) {
    for (const auto& [id, items] : weights[mi].by_node) {
      for (size_t k = 0; k < items.size(); ++k) {
        p.add("m" + std::to_string(mi) + ".n" + std::to_string(id) + "." +
                  role_str(items[k].role),
              items[k].tensor);
      }
    }
    for (const auto& [id, t] : weights[mi].bottleneck) {
      p.add("m" + std::to_string(mi) + ".n" + std::to_string(id) + ".bottleneck", t);
    }
  }
  return p;
}

std::vector<ModuleWeights> ghn_generate(const NetworkPlan& plan,
                                        const std::vector<GhnModel>& models,
                                        const PropagationScheme& scheme, bool pass_embeddings) {
  if (models.empty()) throw ConfigError("ghn_generate: no models");
  if (models.size() != 1 && models.size() != plan.modules.size()) {
    throw ConfigError("ghn_generate: need 1 shared model or one per module (" +
                      std::to_string(plan.modules.size()) + "), got " +
                      std::to_string(models.size()));
  }
  std::vector<const ArchGraph*> graphs;
  std::vector<const GhnModel*> model_ptrs;
  for (const ModulePlan& m : plan.modules) graphs.push_back(&m.graph);
  for (const GhnModel& m : models) model_ptrs.push_back(&m);

  const std::vector<EmbeddingState> states =
      propagate_stacked(std::span<const ArchGraph* const>(graphs.data(), graphs.size()),
                        std::span<const GhnModel* const>(model_ptrs.data(), model_ptrs.size()),
                        scheme, pass_embeddings);

  std::vector<ModuleWeights> weights;
  for (size_t mi = 0; mi < plan.modules.size(); ++mi) {
    const GhnModel& model = models.size() == 1 ? models[0] : models[mi];
    weights.push_back(generate_weights(plan.modules[mi], states[mi], model,
                                       mi + 1 == plan.modules.size()));
  }
  return weights;
}

std::vector<GhnModel> make_ghn_models(const GhnConfig& config, uint64_t seed, int count) {
  std::vector<GhnModel> models;
  for (int i = 0; i < count; ++i) {
    models.push_back(GhnModel::init(config, Rng::derive(seed, 0x90de1, static_cast<uint64_t>(i)).next_u64()));
    models.back().params().set_requires_grad(true);
  }
  return models;
}

namespace {
ParamSet merged_params(std::vector<GhnModel>& models) {
  if (models.size() == 1) return models[0].params();
  ParamSet p;
  for (size_t i = 0; i < models.size(); ++i) {
    p.merge(models[i].params(), "model" + std::to_string(i) + ".");
  }
  return p;
}

std::string spec_json(const NetworkSpec& spec) {
  std::string out;
  for (const ArchGraph& g : spec.blocks) {
    if (!out.empty()) out += "\n";
    out += serialize(g);
  }
  return out;
}
}  // namespace

double ghn_train_step(std::vector<GhnModel>& models, const NetworkSpec& spec, const Batch& batch,
                      AdamState& opt_state, const AdamConfig& adam,
                      const PropagationScheme& scheme, bool pass_embeddings, int classes) {
  const NetworkPlan plan = plan_network(spec, static_cast<int>(batch.images.dim(1)),
                                        static_cast<int>(batch.images.dim(2)),
                                        static_cast<int>(batch.images.dim(3)), classes);
  ParamSet params = merged_params(models);
  params.set_requires_grad(true);

  Tape tape;
  double loss_value = 0.0;
  {
    TapeScope scope(tape);
    CandidateNet net = assemble(plan, ghn_generate(plan, models, scheme, pass_embeddings));
    LossResult loss = forward_loss(net, batch);
    loss_value = loss.total.value();
    if (!std::isfinite(loss_value)) {
      throw TrainingError("ghn_train_step: non-finite loss", spec_json(spec));
    }
    tape.backward(loss.total);
  }
  adam_step(params, opt_state, adam);
  params.zero_grad();
  return loss_value;
}

double sgd_train_candidate(const NetworkSpec& spec, const Dataset& train, const Dataset& val,
                           const SgdTrainOptions& opts, uint64_t seed) {
  const NetworkPlan plan =
      plan_network(spec, train.channels, train.height, train.width, train.classes);
  std::vector<ModuleWeights> weights = init_owned_weights(plan, seed);
  ParamSet params = owned_params(weights);
  params.set_requires_grad(true);
  CandidateNet net = assemble(plan, std::move(weights));

  AdamState opt;
  AdamConfig adam;
  adam.lr = opts.lr;
  for (int step = 0; step < opts.steps; ++step) {
    Rng rng = Rng::derive(seed, 0xba7c4, static_cast<uint64_t>(step));
    Batch batch = sample_batch(train, opts.batch_size, rng);
    Tape tape;
    {
      TapeScope scope(tape);
      LossResult loss = forward_loss(net, batch);
      if (!std::isfinite(loss.total.value())) {
        throw TrainingError("sgd_train_candidate: non-finite loss", spec_json(spec));
      }
      tape.backward(loss.total);
    }
    adam_step(params, opt, adam);
    params.zero_grad();
  }
  params.set_requires_grad(false);
  return eval_net(net, val, opts.eval_batch).accuracy;
}

EvalResult eval_net(const CandidateNet& net, const Dataset& val, int eval_batch) {
  const int64_t n = val.count();
  if (n < 1) throw InputError("eval_net: empty dataset");
  std::vector<int64_t> correct(net.plan.exits.size(), 0);
  for (int64_t start = 0; start < n; start += eval_batch) {
    const int64_t len = std::min<int64_t>(eval_batch, n - start);
    const Batch batch = take_batch(val, start, len);
    const ForwardResult fwd = forward_candidate(net, batch.images);
    for (size_t e = 0; e < fwd.exit_logits.size(); ++e) {
      const Tensor& logits = fwd.exit_logits[e];
      const int64_t classes = logits.dim(1);
      for (int64_t b = 0; b < len; ++b) {
        const double* row = logits.data() + b * classes;
        int64_t best = 0;
        for (int64_t c = 1; c < classes; ++c) {
          if (row[c] > row[best]) best = c;
        }
        if (best == batch.labels[static_cast<size_t>(b)]) correct[e] += 1;
      }
    }
  }
  EvalResult result;
  for (size_t e = 0; e < correct.size(); ++e) {
    result.exit_curve.emplace_back(net.plan.exits[e].flops,
                                   static_cast<double>(correct[e]) / static_cast<double>(n));
  }
  result.accuracy = result.exit_curve.back().second;
  if (net.plan.mode != GraphMode::kAnytime) {
    result.exit_curve = {result.exit_curve.back()};
  }
  return result;
}

EvalResult eval_with_generated(const std::vector<GhnModel>& models, const NetworkSpec& spec,
                               const Dataset& val, const PropagationScheme& scheme,
                               bool pass_embeddings, int eval_batch) {
  const NetworkPlan plan = plan_network(spec, val.channels, val.height, val.width, val.classes);
  CandidateNet net = assemble(plan, ghn_generate(plan, models, scheme, pass_embeddings));
  return eval_net(net, val, eval_batch);
}

}  // namespace ghn
