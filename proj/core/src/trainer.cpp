#include "ghnsearch/trainer.hpp"

namespace ghn {

double lr_at_step(const TrainConfig& cfg, int step) {
  double lr = cfg.lr;
  if (step >= cfg.steps / 2) lr *= 0.5;
  if (step >= cfg.steps * 3 / 4) lr *= 0.5;
  return lr;
}

int model_count(const TrainConfig& cfg) {
  if (cfg.share_params) return 1;
  const int blocks = cfg.ghn.mode == GraphMode::kAnytime
                         ? static_cast<int>(cfg.sample.anytime_sizes.size())
                         : cfg.sample.repeat;
  return blocks + 2;  // stem + blocks + head
}

NetworkSpec sample_train_spec(const TrainConfig& cfg, int step) {
  Rng rng = Rng::derive(cfg.seed, 0x57e9, static_cast<uint64_t>(step));
  NetworkSampleOptions opts = cfg.sample;
  if (cfg.ghn.mode == GraphMode::kAnytime) {
    for (int& size : opts.anytime_sizes) {
      size = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(size)));
    }
  } else {
    opts.n_nodes = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.n_max)));
  }
  return sample_network_spec(opts, rng.next_u64());
}

namespace {

TrainResult run(const TrainConfig& cfg, const Dataset& train_data, std::vector<GhnModel> models,
                AdamState opt, int start_step, const StepCallback& on_step) {
  for (int step = start_step; step < cfg.steps; ++step) {
    const NetworkSpec spec = sample_train_spec(cfg, step);
    Rng batch_rng = Rng::derive(cfg.seed, 0xba7c, static_cast<uint64_t>(step));
    const Batch batch = sample_batch(train_data, cfg.batch_size, batch_rng);
    AdamConfig adam;
    adam.lr = lr_at_step(cfg, step);
    const double loss = ghn_train_step(models, spec, batch, opt, adam, cfg.scheme,
                                       cfg.pass_embeddings, train_data.classes);
    if (on_step) on_step(step, loss, adam.lr, models, opt);
  }
  return TrainResult{std::move(models), std::move(opt), cfg.steps};
}

}  // namespace

TrainResult train_ghn(const TrainConfig& cfg, const Dataset& train_data,
                      const StepCallback& on_step) {
  std::vector<GhnModel> models = make_ghn_models(cfg.ghn, cfg.seed, model_count(cfg));
  return run(cfg, train_data, std::move(models), AdamState{}, 0, on_step);
}

TrainResult resume_ghn(const TrainConfig& cfg, const Dataset& train_data, Checkpoint from,
                       const StepCallback& on_step) {
  if (from.models.empty()) throw ConfigError("resume_ghn: checkpoint holds no models");
  if (static_cast<int>(from.models.size()) != model_count(cfg)) {
    throw ConfigError("resume_ghn: checkpoint has " + std::to_string(from.models.size()) +
                      " models, config expects " + std::to_string(model_count(cfg)));
  }
  return run(cfg, train_data, std::move(from.models), std::move(from.opt),
             static_cast<int>(from.step), on_step);
}

}  // namespace ghn
