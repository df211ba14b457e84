#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ghnsearch/dataset.hpp"
#include "ghnsearch/ghn.hpp"
#include "ghnsearch/plan.hpp"

namespace ghn {

/// Executable candidate: a resolved plan plus one weight bundle per module.
/// The same structure carries hypernet-generated tensors (taped, gradients
/// flow back into the generator) and owned tensors (leaf parameters for
/// ground-truth training).
struct CandidateNet {
  NetworkPlan plan;
  std::vector<ModuleWeights> weights;
};

/// Binds weights to the plan, checking that every parameterized node resolves
/// to exactly the tensors its operator demands (shape-exact). Throws
/// AssemblyError naming the first offending node.
CandidateNet assemble(NetworkPlan plan, std::vector<ModuleWeights> weights);

struct ForwardResult {
  Tensor logits;                     // final head [B, classes]
  std::vector<Tensor> exit_logits;   // aligned with plan.exits (final head last)
};

ForwardResult forward_candidate(const CandidateNet& net, const Tensor& images);

struct LossResult {
  Tensor total;                   // anytime: mean over exits; standard: head loss
  std::vector<Tensor> per_exit;
};

LossResult forward_loss(const CandidateNet& net, const Batch& batch);

/// Fraction of correct argmax predictions over the whole dataset,
/// deterministic. Anytime mode also reports per-exit (flops, accuracy) pairs
/// in ascending-FLOP order.
struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::pair<int64_t, double>> exit_curve;
};

/// Independently initialized parameter bundle for ground-truth training.
std::vector<ModuleWeights> init_owned_weights(const NetworkPlan& plan, uint64_t seed);
ParamSet owned_params(const std::vector<ModuleWeights>& weights);

/// Run the full generator for a candidate plan: stacked propagation over the
/// module chain followed by per-module weight generation. `models` is one
/// shared model or one per module.
std::vector<ModuleWeights> ghn_generate(const NetworkPlan& plan,
                                        const std::vector<GhnModel>& models,
                                        const PropagationScheme& scheme, bool pass_embeddings);

/// One shared model (size 1) or one independently seeded model per module
/// position of a `repeat`-block network (stem + blocks + head).
std::vector<GhnModel> make_ghn_models(const GhnConfig& config, uint64_t seed, int count);

/// One end-to-end optimization step: generate weights for the sampled spec,
/// assemble, forward the batch, backpropagate the loss through the candidate
/// into the hypernet and the unrolled propagation, and apply one Adam update
/// to every GHN parameter. Returns the loss. Throws TrainingError (carrying
/// the serialized block) on a non-finite loss.
double ghn_train_step(std::vector<GhnModel>& models, const NetworkSpec& spec, const Batch& batch,
                      AdamState& opt_state, const AdamConfig& adam,
                      const PropagationScheme& scheme, bool pass_embeddings, int classes);

/// Ground-truth oracle: train a candidate's own weights with Adam for `steps`
/// on the train split and return held-out accuracy on the validation split.
struct SgdTrainOptions {
  int steps = 500;
  int batch_size = 32;
  double lr = 3e-3;
  int eval_batch = 100;
};

double sgd_train_candidate(const NetworkSpec& spec, const Dataset& train, const Dataset& val,
                           const SgdTrainOptions& opts, uint64_t seed);

/// Accuracy of the assembled candidate under generated weights (no training).
EvalResult eval_with_generated(const std::vector<GhnModel>& models, const NetworkSpec& spec,
                               const Dataset& val, const PropagationScheme& scheme,
                               bool pass_embeddings = true, int eval_batch = 100);

EvalResult eval_net(const CandidateNet& net, const Dataset& val, int eval_batch = 100);

}  // namespace ghn
