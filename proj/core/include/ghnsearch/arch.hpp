#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ghnsearch/errors.hpp"

namespace ghn {

enum class OpKind {
  kIdentity,
  kConv1x1,
  kSepConv3x3,
  kSepConv5x5,
  kDilSepConv3x3,
  kDilSepConv5x5,
  kConv1x7_7x1,
  kMaxPool3x3,
  kAvgPool3x3,
  // anytime-only dense convolutions
  kConv3x3,
  kConv5x5,
};

enum class SearchSpace { kStandard, kAnytime };
enum class GraphMode { kStandard, kAnytime };
enum class JoinRule { kSum, kConcat };
enum class Scale { kFull = 1, kHalf = 2, kQuarter = 4 };

const std::vector<OpKind>& space_ops(SearchSpace space);  // 9 standard, 5 anytime
std::string op_name(OpKind op);
OpKind op_from_name(const std::string& name);
bool op_has_params(OpKind op);
int op_kernel_extent(OpKind op);  // spatial taps needed (7 for 1x7/7x1)

std::string scale_name(Scale s);
Scale scale_from_name(const std::string& name);

struct AnytimeAttrs {
  Scale scale = Scale::kFull;
  bool early_exit = false;
  bool operator==(const AnytimeAttrs&) const = default;
};

struct ArchNode {
  int id = 0;
  OpKind op = OpKind::kIdentity;
  std::optional<AnytimeAttrs> anytime;
  bool operator==(const ArchNode&) const = default;
};

/// Candidate block as a DAG. Nodes carry operator kinds; the ordered edge
/// list is part of the value (anytime bottlenecks concatenate per-edge weight
/// slabs in this order). Immutable by convention once built.
struct ArchGraph {
  std::vector<ArchNode> nodes;
  std::vector<std::pair<int, int>> edges;  // (src, dst)
  std::vector<int> input_ids;
  GraphMode mode = GraphMode::kStandard;
  JoinRule join = JoinRule::kSum;

  bool operator==(const ArchGraph&) const = default;

  const ArchNode& node(int id) const;
  bool is_input(int id) const;
  std::vector<int> in_neighbors(int id) const;
  std::vector<int> leaf_ids() const;  // no outgoing edges, ascending id
};

struct SampleOptions {
  /// Scales a sampled node may use (anytime mode); defaults to all three.
  std::vector<Scale> allowed_scales = {Scale::kFull, Scale::kHalf, Scale::kQuarter};
  /// Number of nodes flagged with an early-exit classifier (anytime mode).
  int exit_count = 1;
};

/// Uniformly random DAG: each of the n op nodes picks its operator uniformly
/// from the space and connects to 1-2 distinct uniformly chosen earlier nodes
/// (op nodes or input nodes). Standard blocks get 2 input nodes, anytime
/// blocks 1. Deterministic in the seed.
ArchGraph sample_block(SearchSpace space, int n_nodes, uint64_t seed,
                       const SampleOptions& opts = {});

/// Order with every edge pointing forward; ties broken by ascending node id.
/// Throws GraphError naming a cycle witness if the graph is cyclic.
std::vector<int> topological_sort(const ArchGraph& g);

/// All structural violations (empty means valid). anytime_block_pos, when
/// given, additionally enforces per-block scale limits (1-based: block 1 any
/// scale, block 2 at most half, block 3 quarter only).
std::vector<std::string> validate(const ArchGraph& g,
                                  std::optional<int> anytime_block_pos = std::nullopt);

/// JSON round-trip with schema tag "ghn-arch/1"; keys sorted, edge order
/// preserved. deserialize throws ParseError with the offending token.
std::string serialize(const ArchGraph& g);
ArchGraph deserialize(const std::string& text);

/// FNV-1a over the canonical serialization, as a 16-hex-digit string.
std::string graph_hash(const ArchGraph& g);

/// Full network: a chain of block instances plus stem and classifier head.
/// Standard mode repeats one block; anytime mode lists per-position blocks.
struct NetworkSpec {
  std::vector<ArchGraph> blocks;  // size 1 when `repeat` applies to a single motif
  int repeat = 1;
  std::set<int> reductions;  // 1-based block positions that halve spatial size
  int initial_channels = 8;
  GraphMode mode = GraphMode::kStandard;
};

/// Standard-mode macro-skeleton: the same block graph at every position,
/// spatial size halved and channels doubled at each reduction position.
NetworkSpec stack_blocks(const ArchGraph& block, int repeat, const std::set<int>& reductions,
                         int initial_channels);

/// Anytime-mode network from per-position blocks (uniform channel width).
NetworkSpec make_anytime_spec(std::vector<ArchGraph> blocks, int initial_channels);

std::vector<std::string> validate_spec(const NetworkSpec& spec);

/// Channel progression per block position (1-based access by index 0..repeat-1).
std::vector<int> channel_progression(const NetworkSpec& spec);

/// One-stop candidate sampler used by training and search.
struct NetworkSampleOptions {
  GraphMode mode = GraphMode::kStandard;
  int n_nodes = 5;  // op nodes per standard block
  int repeat = 2;
  std::set<int> reductions = {1};
  int channels = 8;
  std::vector<int> anytime_sizes = {5, 4, 3};  // nodes per anytime block
  int exits_per_block = 1;
};

/// Samples a block (standard) or per-position blocks with the position's
/// allowed scale set (anytime) and wraps them into a NetworkSpec.
NetworkSpec sample_network_spec(const NetworkSampleOptions& opts, uint64_t seed);

/// Scales a node may use at 1-based block position `pos`.
std::vector<Scale> allowed_scales_at(int pos);

}  // namespace ghn
