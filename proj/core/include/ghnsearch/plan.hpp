#pragma once

#include <cstdint>
#include <vector>

#include "ghnsearch/arch.hpp"

namespace ghn {

/// Resolved per-node execution facts: channel widths, spatial extent and the
/// node's own cost. Spatial extents already account for scales (anytime) and
/// reductions (standard).
struct NodePlan {
  int id = 0;
  OpKind op = OpKind::kIdentity;
  int c_in = 0;     // channels entering the main operator
  int c_out = 0;    // channels leaving the node
  int h = 0, w = 0; // output spatial extent
  int stride = 1;          // input-node bottleneck stride (standard reductions)
  int bottleneck_in = 0;   // anytime: concat width entering the 1x1 bottleneck
  Scale scale = Scale::kFull;
  bool early_exit = false;
  int exit_classes = 0;  // class count of the attached exit head (0 = none)
  int64_t flops = 0;  // 2*MACs for this node (all per-edge applications)
};

struct ModulePlan {
  ArchGraph graph;
  std::vector<NodePlan> nodes;   // aligned with graph.nodes
  std::vector<int> topo_order;   // node ids
  // Wiring of graph.input_ids: which earlier module feeds each input node and
  // the spatial adapter (avg-pool factor) applied before its bottleneck.
  std::vector<int> ext_source;
  std::vector<int> ext_pool;
  int out_channels = 0;  // width of the module output (leaf concat)
  int out_h = 0, out_w = 0;
  Scale out_scale = Scale::kFull;
};

struct ExitPoint {
  int module = 0;  // module index
  int node = -1;   // node id, -1 for the final classifier head
  int64_t flops = 0;  // cumulative cost up to and including this exit
};

/// Executable layout: [stem, block instances..., classifier head]. The stem
/// and head are single-conv modules so that every free parameter in the
/// network resolves to some graph node.
struct NetworkPlan {
  GraphMode mode = GraphMode::kStandard;
  int in_channels = 0, in_h = 0, in_w = 0;
  int classes = 0;
  std::vector<ModulePlan> modules;
  std::vector<ExitPoint> exits;  // execution order; last entry is the head
  int64_t total_flops = 0;
};

NetworkPlan plan_network(const NetworkSpec& spec, int in_channels, int in_h, int in_w,
                         int classes);

/// Per-exit cumulative FLOP counts (2*MACs per conv/linear, pooling free).
/// Standard mode yields a single entry (the classifier head).
std::vector<int64_t> count_flops(const NetworkSpec& spec, int in_channels, int in_h, int in_w,
                                 int classes);

}  // namespace ghn
