#pragma once

#include <functional>
#include <string>

#include "ghnsearch/candidate.hpp"
#include "ghnsearch/checkpoint.hpp"
#include "ghnsearch/dataset.hpp"

namespace ghn {

/// Full GHN optimization run. Every per-step random quantity (sampled graph,
/// batch indices) derives from (seed, step), so a resumed run continues on
/// the exact stream of the uninterrupted one.
struct TrainConfig {
  GhnConfig ghn;
  NetworkSampleOptions sample;  // eval-shaped candidates; n per step drawn below
  PropagationScheme scheme;     // forward-backward, 5 passes by default
  int steps = 600;
  int batch_size = 64;
  double lr = 1e-3;  // halved at 50% and 75% of the run
  int n_max = 7;     // nodes per sampled block: uniform in [1, n_max]
  bool pass_embeddings = true;
  bool share_params = true;
  uint64_t seed = 42;
};

struct TrainResult {
  std::vector<GhnModel> models;
  AdamState opt;
  int64_t steps_done = 0;
};

double lr_at_step(const TrainConfig& cfg, int step);

/// Number of GHN position models the config requires (1 when shared).
int model_count(const TrainConfig& cfg);

/// Sample the training network for a given step (random node count, then the
/// usual block sampler).
NetworkSpec sample_train_spec(const TrainConfig& cfg, int step);

using StepCallback = std::function<void(int step, double loss, double lr,
                                        const std::vector<GhnModel>& models,
                                        const AdamState& opt)>;

TrainResult train_ghn(const TrainConfig& cfg, const Dataset& train_data,
                      const StepCallback& on_step = nullptr);

/// Continue a checkpointed run up to cfg.steps.
TrainResult resume_ghn(const TrainConfig& cfg, const Dataset& train_data, Checkpoint from,
                       const StepCallback& on_step = nullptr);

}  // namespace ghn
