#include "ghnsearch/plan.hpp"

#include <algorithm>
#include <sstream>

namespace ghn {

namespace {

int64_t conv_flops(int64_t cout, int64_t cin, int64_t kh, int64_t kw, int64_t h, int64_t w) {
  return 2 * cout * cin * kh * kw * h * w;  // 2 FLOPs per MAC
}

// Cost of one application of the node's operator at width c and spatial h*w.
int64_t op_application_flops(OpKind op, int64_t c, int64_t h, int64_t w) {
  const int k = op_kernel_extent(op);
  switch (op) {
    case OpKind::kIdentity:
    case OpKind::kMaxPool3x3:
    case OpKind::kAvgPool3x3:
      return 0;
    case OpKind::kConv1x1:
    case OpKind::kConv3x3:
    case OpKind::kConv5x5:
      return conv_flops(c, c, k, k, h, w);
    case OpKind::kSepConv3x3:
    case OpKind::kSepConv5x5:
    case OpKind::kDilSepConv3x3:
    case OpKind::kDilSepConv5x5:
      return conv_flops(c, 1, k, k, h, w) + conv_flops(c, c, 1, 1, h, w);
    case OpKind::kConv1x7_7x1:
      return conv_flops(c, c, 1, 7, h, w) + conv_flops(c, c, 7, 1, h, w);
  }
  return 0;
}

ArchGraph single_conv_module(GraphMode mode, Scale scale) {
  ArchGraph g;
  g.mode = mode;
  g.join = mode == GraphMode::kAnytime ? JoinRule::kConcat : JoinRule::kSum;
  ArchNode n;
  n.id = 0;
  n.op = OpKind::kConv1x1;
  if (mode == GraphMode::kAnytime) n.anytime = AnytimeAttrs{scale, false};
  g.nodes.push_back(n);
  g.input_ids.push_back(0);
  return g;
}

void check_extent(int64_t h, int64_t w, const char* where) {
  if (h < 1 || w < 1) {
    throw DimensionError(std::string("plan_network: spatial extent underflow at ") + where);
  }
}

ModulePlan plan_standard_block(const ArchGraph& block, int width,
                               const std::vector<int>& src_widths,
                               const std::vector<int>& src_h, int target_h, int target_w,
                               const std::vector<int>& ext_source) {
  ModulePlan m;
  m.graph = block;
  m.topo_order = topological_sort(block);
  m.ext_source = ext_source;
  check_extent(target_h, target_w, "block");

  const bool reduction_stride = !src_h.empty() && src_h[0] > target_h;
  for (size_t j = 0; j < block.input_ids.size(); ++j) {
    const int ratio = src_h[j] / target_h;
    const int stride = reduction_stride ? 2 : 1;
    m.ext_pool.push_back(std::max(1, ratio / stride));
  }

  m.nodes.resize(block.nodes.size());
  for (size_t i = 0; i < block.nodes.size(); ++i) {
    const ArchNode& n = block.nodes[i];
    NodePlan& p = m.nodes[i];
    p.id = n.id;
    p.op = n.op;
    p.h = target_h;
    p.w = target_w;
    p.c_out = width;
    if (block.is_input(n.id)) {
      const auto it = std::find(block.input_ids.begin(), block.input_ids.end(), n.id);
      const size_t j = static_cast<size_t>(it - block.input_ids.begin());
      p.c_in = src_widths[j];
      p.stride = reduction_stride ? 2 : 1;
      p.flops = conv_flops(width, p.c_in, 1, 1, target_h, target_w);
    } else {
      p.c_in = width;
      const int64_t fan_in = static_cast<int64_t>(block.in_neighbors(n.id).size());
      p.flops = fan_in * op_application_flops(n.op, width, target_h, target_w);
    }
  }

  const std::vector<int> leaves = block.leaf_ids();
  m.out_channels = static_cast<int>(leaves.size()) * width;
  m.out_h = target_h;
  m.out_w = target_w;
  return m;
}

ModulePlan plan_anytime_block(const ArchGraph& block, int width, int src_width, int base_h,
                              int base_w, int ext_source, int classes) {
  ModulePlan m;
  m.graph = block;
  m.topo_order = topological_sort(block);
  m.ext_source = {ext_source};
  m.ext_pool = {1};  // resampling handled per node from scale ratios

  m.nodes.resize(block.nodes.size());
  Scale coarsest = Scale::kFull;
  for (size_t i = 0; i < block.nodes.size(); ++i) {
    const ArchNode& n = block.nodes[i];
    if (!n.anytime) throw ConfigError("anytime plan: node missing anytime attributes");
    NodePlan& p = m.nodes[i];
    p.id = n.id;
    p.op = n.op;
    p.scale = n.anytime->scale;
    p.early_exit = n.anytime->early_exit;
    const int div = static_cast<int>(p.scale);
    p.h = base_h / div;
    p.w = base_w / div;
    check_extent(p.h, p.w, "anytime node");
    p.c_out = width;
    if (block.is_input(n.id)) {
      p.c_in = src_width;
      p.flops = conv_flops(width, src_width, 1, 1, p.h, p.w);
    } else {
      const int64_t fan_in = static_cast<int64_t>(block.in_neighbors(n.id).size());
      p.c_in = width;
      p.bottleneck_in = static_cast<int>(fan_in) * width;
      p.flops = conv_flops(width, p.bottleneck_in, 1, 1, p.h, p.w) +
                op_application_flops(n.op, width, p.h, p.w);
    }
    if (p.early_exit) {
      p.exit_classes = classes;
      p.flops += conv_flops(classes, width, 1, 1, 1, 1);
    }
  }

  const std::vector<int> leaves = block.leaf_ids();
  for (int leaf : leaves) {
    const ArchNode& n = block.node(leaf);
    if (static_cast<int>(n.anytime->scale) > static_cast<int>(coarsest)) {
      coarsest = n.anytime->scale;
    }
  }
  m.out_scale = coarsest;
  m.out_channels = static_cast<int>(leaves.size()) * width;
  m.out_h = base_h / static_cast<int>(coarsest);
  m.out_w = base_w / static_cast<int>(coarsest);
  return m;
}

}  // namespace

NetworkPlan plan_network(const NetworkSpec& spec, int in_channels, int in_h, int in_w,
                         int classes) {
  {
    const auto violations = validate_spec(spec);
    if (!violations.empty()) {
      std::ostringstream os;
      os << "plan_network: invalid spec:";
      for (const auto& v : violations) os << " [" << v << "]";
      throw GraphError(os.str());
    }
  }
  if (in_channels < 1 || classes < 1) throw InputError("plan_network: bad channel/class counts");
  check_extent(in_h, in_w, "input");

  NetworkPlan plan;
  plan.mode = spec.mode;
  plan.in_channels = in_channels;
  plan.in_h = in_h;
  plan.in_w = in_w;
  plan.classes = classes;

  const std::vector<int> widths = channel_progression(spec);

  if (spec.mode == GraphMode::kStandard) {
    // Stem projects the image to the first block's width at full resolution.
    ModulePlan stem;
    stem.graph = single_conv_module(GraphMode::kStandard, Scale::kFull);
    stem.topo_order = {0};
    stem.ext_source = {-1};
    stem.ext_pool = {1};
    NodePlan sp;
    sp.id = 0;
    sp.op = OpKind::kConv1x1;
    sp.c_in = in_channels;
    sp.c_out = widths[0];
    sp.h = in_h;
    sp.w = in_w;
    sp.flops = conv_flops(sp.c_out, sp.c_in, 1, 1, in_h, in_w);
    stem.nodes = {sp};
    stem.out_channels = widths[0];
    stem.out_h = in_h;
    stem.out_w = in_w;
    plan.modules.push_back(std::move(stem));

    for (int p = 1; p <= spec.repeat; ++p) {
      int halvings = 0;
      for (int r : spec.reductions) {
        if (r < p) ++halvings;
      }
      const int th = in_h >> halvings, tw = in_w >> halvings;
      const int src0 = p - 1, src1 = std::max(p - 2, 0);
      const ModulePlan& m0 = plan.modules[static_cast<size_t>(src0)];
      const ModulePlan& m1 = plan.modules[static_cast<size_t>(src1)];
      plan.modules.push_back(plan_standard_block(
          spec.blocks[0], widths[static_cast<size_t>(p - 1)],
          {m0.out_channels, m1.out_channels}, {m0.out_h, m1.out_h}, th, tw, {src0, src1}));
    }
  } else {
    if (in_h % 4 != 0 || in_w % 4 != 0) {
      throw DimensionError("plan_network: anytime mode needs input extents divisible by 4");
    }
    ModulePlan stem;
    stem.graph = single_conv_module(GraphMode::kAnytime, Scale::kFull);
    stem.topo_order = {0};
    stem.ext_source = {-1};
    stem.ext_pool = {1};
    NodePlan sp;
    sp.id = 0;
    sp.op = OpKind::kConv1x1;
    sp.c_in = in_channels;
    sp.c_out = spec.initial_channels;
    sp.h = in_h;
    sp.w = in_w;
    sp.scale = Scale::kFull;
    sp.flops = conv_flops(sp.c_out, sp.c_in, 1, 1, in_h, in_w);
    stem.nodes = {sp};
    stem.out_channels = spec.initial_channels;
    stem.out_h = in_h;
    stem.out_w = in_w;
    stem.out_scale = Scale::kFull;
    plan.modules.push_back(std::move(stem));

    for (int p = 1; p <= spec.repeat; ++p) {
      const ModulePlan& prev = plan.modules.back();
      plan.modules.push_back(plan_anytime_block(spec.blocks[static_cast<size_t>(p - 1)],
                                                spec.initial_channels, prev.out_channels,
                                                in_h, in_w, p - 1, classes));
    }
  }

  // Classifier head: global average pool then a 1x1 projection to classes.
  {
    const ModulePlan& last = plan.modules.back();
    ModulePlan head;
    head.graph = single_conv_module(spec.mode, last.out_scale);
    head.topo_order = {0};
    head.ext_source = {static_cast<int>(plan.modules.size()) - 1};
    head.ext_pool = {1};
    NodePlan hp;
    hp.id = 0;
    hp.op = OpKind::kConv1x1;
    hp.c_in = last.out_channels;
    hp.c_out = classes;
    hp.h = 1;
    hp.w = 1;
    hp.scale = last.out_scale;
    hp.flops = conv_flops(classes, last.out_channels, 1, 1, 1, 1);
    head.nodes = {hp};
    head.out_channels = classes;
    head.out_h = 1;
    head.out_w = 1;
    head.out_scale = last.out_scale;
    plan.modules.push_back(std::move(head));
  }

  // Exits in execution order with cumulative cost.
  int64_t cumulative = 0;
  for (size_t mi = 0; mi < plan.modules.size(); ++mi) {
    const ModulePlan& m = plan.modules[mi];
    for (int id : m.topo_order) {
      const NodePlan* np = nullptr;
      for (const NodePlan& cand : m.nodes) {
        if (cand.id == id) {
          np = &cand;
          break;
        }
      }
      cumulative += np->flops;
      if (np->early_exit) {
        plan.exits.push_back({static_cast<int>(mi), id, cumulative});
      }
    }
  }
  plan.total_flops = cumulative;
  plan.exits.push_back(
      {static_cast<int>(plan.modules.size()) - 1, 0, cumulative});  // final head
  return plan;
}

std::vector<int64_t> count_flops(const NetworkSpec& spec, int in_channels, int in_h, int in_w,
                                 int classes) {
  const NetworkPlan plan = plan_network(spec, in_channels, in_h, in_w, classes);
  std::vector<int64_t> flops;
  flops.reserve(plan.exits.size());
  for (const ExitPoint& e : plan.exits) flops.push_back(e.flops);
  return flops;
}

}  // namespace ghn
