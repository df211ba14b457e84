#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace ghn::cli {

/// Every tunable of the pipeline. Flags and config-file keys are the same
/// set; paper-stated training values are the defaults.
struct RunConfig {
  // mode & model
  std::string mode = "standard";  // standard | anytime
  int hidden = 32;
  int msg_hidden = 32;
  int hyper_hidden = 64;
  int channel_tile = 8;
  double hyper_out_scale = 0.01;
  std::string scheme = "fb";  // fb | sync
  int passes = 5;
  bool handoff_every_step = true;
  bool share_params = true;
  bool pass_embeddings = true;

  // search space / candidate shape
  int train_n_max = 7;
  int eval_nodes = 5;
  int repeat = 2;
  std::vector<int> reductions = {1};
  int channels = 8;
  std::vector<int> anytime_sizes = {5, 4, 3};
  int exits_per_block = 1;

  // training
  int steps = 600;
  int batch_size = 64;
  double lr = 1e-3;
  int checkpoint_every = 0;  // 0: final checkpoint only

  // task
  int data_train = 2000;
  int data_val = 500;
  int classes = 10;
  int image_size = 16;

  // command inputs/outputs
  std::string out_dir = "out";
  std::string data_prefix;  // defaults to <out_dir>/data
  std::string ckpt;         // checkpoint path for search/correlate/plotdata
  std::string resume;       // checkpoint to continue training from
  std::string arch;         // architecture JSON for flops
  std::string from_dir;     // artifact dir for plotdata (defaults to out_dir)

  // search / correlation
  int search_m = 100;
  int search_k = 10;
  int truth_steps = 500;
  int truth_batch = 32;
  double truth_lr = 3e-3;
  int corr_n = 30;
  std::string ablate_axis = "scheme";
  std::vector<int> ablate_grid = {1, 3, 5};

  uint64_t seed = 42;
  int threads = 1;
};

struct App {
  CLI::App app{"Graph-hypernetwork architecture search pipeline", "ghn"};
  RunConfig config;
  std::string command;  // resolved verb after parse

  App();
};

/// Executes the parsed command. Returns the process exit code (0 ok).
int run_command(App& app);

/// Parse + dispatch; maps config errors to exit 2 and runtime errors to 3.
int main_entry(int argc, const char* const* argv);

}  // namespace ghn::cli
