#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ghnsearch/arch.hpp"
#include "ghnsearch/nn.hpp"
#include "ghnsearch/plan.hpp"
#include "ghnsearch/tensor.hpp"

namespace ghn {

enum class SchemeKind { kSynchronous, kForwardBackward };

/// Synchronous runs `steps` simultaneous updates of all nodes; ForwardBackward
/// runs `steps` full sweeps, each touching the nodes once in topological order
/// and once in reverse for exactly 2|V|-1 single-node updates.
struct PropagationScheme {
  SchemeKind kind = SchemeKind::kForwardBackward;
  int steps = 5;

  static PropagationScheme synchronous(int t) { return {SchemeKind::kSynchronous, t}; }
  static PropagationScheme forward_backward(int passes) {
    return {SchemeKind::kForwardBackward, passes};
  }
};

struct GhnConfig {
  GraphMode mode = GraphMode::kStandard;
  int hidden = 32;        // node embedding size D
  int msg_hidden = 32;    // hidden width of the message MLP
  int hyper_hidden = 64;  // hidden width of the hypernet MLP
  int channel_tile = 8;   // channel extent of one generated weight slab
  int max_kernel = 7;     // spatial extent of one slab (covers every op kernel)
  /// Deliver the stacked-block embedding hand-off at every update of the
  /// input nodes (true) or only at their first update (false).
  bool handoff_every_step = true;
  /// Init scale of the hypernet output layer (keeps early generated weights
  /// small).
  double hyper_out_scale = 0.01;

  static GhnConfig defaults(GraphMode mode);
  int onehot_dims() const;  // |ops| standard; |ops|+|scales|+2 anytime
  int slab_size() const { return channel_tile * channel_tile * max_kernel * max_kernel; }
};

/// All learnable state: the one-hot projection matrix, the recurrent cell U,
/// the message MLP M and the hypernet head H (plus the edge head in anytime
/// mode). One parameter set serves every node of every graph.
struct GhnModel {
  GhnConfig config;
  Tensor embed;  // [onehot_dims, D]
  GruParams gru;
  Mlp msg;         // D -> D
  Mlp hyper;       // D+4 -> slab_size (4 suffix dims: role + tile position)
  Mlp edge_hyper;  // 2D+4 -> tile^2 (anytime bottleneck head)

  static GhnModel init(const GhnConfig& config, uint64_t seed);
  ParamSet params() const;
};

/// One embedding row per arch node, aligned with graph.nodes order.
struct EmbeddingState {
  std::vector<Tensor> h;      // each [1, D]
  std::vector<int> node_ids;  // alignment check against the graph
  int64_t node_updates = 0;   // single-node update counter

  int index_of(int node_id) const;
};

EmbeddingState init_embeddings(const ArchGraph& g, const GhnModel& model);

/// All nodes update simultaneously from the previous step's embeddings;
/// nodes without in-edges receive the zero message.
void step_synchronous(const ArchGraph& g, EmbeddingState& state, const GhnModel& model);

/// One forward-backward sweep: single-node updates along a topological sort,
/// then in reverse (the last node is not repeated), each reading its
/// neighbors' current embeddings. Messages keep summing over in-neighbors in
/// both halves.
void step_forward_backward(const ArchGraph& g, EmbeddingState& state, const GhnModel& model);

EmbeddingState propagate(const ArchGraph& g, const GhnModel& model,
                         const PropagationScheme& scheme);

/// Mean of all node embeddings; invariant under node permutation.
Tensor graph_embedding(const EmbeddingState& state);

/// Chain of blocks: block i receives the previous block's graph embedding as
/// an extra message into its input nodes (h for block 0 is the zero vector).
/// `models` holds either one shared model or one per block; `pass_embeddings`
/// disables the hand-off when false (each block then propagates on its own).
std::vector<EmbeddingState> propagate_stacked(std::span<const ArchGraph* const> blocks,
                                              std::span<const GhnModel* const> models,
                                              const PropagationScheme& scheme,
                                              bool pass_embeddings = true);

enum class WeightRole {
  kKernel,          // main kernel (dense, depthwise, or the 1xk stage)
  kKernelSecond,    // pointwise stage or the kx1 stage
  kAffineScale,     // per-channel scale (emitted around 1)
  kAffineBias,      // per-channel shift
  kExitClassifier,  // early-exit head projection
};

struct TaggedTensor {
  WeightRole role;
  Tensor tensor;
};

/// node id -> generated parameter tensors; pooling/identity nodes map to an
/// empty list. Anytime concat bottlenecks are kept separately because they
/// are generated from edge activations, not node activations.
struct ModuleWeights {
  std::map<int, std::vector<TaggedTensor>> by_node;
  std::map<int, Tensor> bottleneck;  // keyed by destination node id
};

/// Generate every node-anchored weight tensor demanded by the module plan.
/// Kernels smaller than the slab extent are centered slices; channel counts
/// beyond the tile width tile over repeated hypernet calls distinguished by a
/// positional suffix. `is_head` suppresses the affine pair (raw logits).
ModuleWeights generate_weights(const ModulePlan& plan, const EmbeddingState& state,
                               const GhnModel& model, bool is_head = false);

/// Anytime-mode bottleneck for a concat node: per incoming edge (u,v) the
/// edge head maps concat(h_u, h_v) to a [c_out x c_per_edge] slab; slabs are
/// concatenated along the input axis in the graph's stored edge order.
Tensor generate_bottleneck_from_edges(const ArchGraph& g, const EmbeddingState& state,
                                      const GhnModel& model, int dst_node, int c_out,
                                      int c_per_edge);

}  // namespace ghn
