#include "cli.hpp"

#include <filesystem>
#include <iostream>

#include "ghnsearch/checkpoint.hpp"
#include "ghnsearch/io.hpp"
#include "ghnsearch/search.hpp"
#include "json.hpp"

namespace ghn::cli {

using nlohmann::json;
namespace fs = std::filesystem;

App::App() {
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Read options from a key=value config file");
  app.require_subcommand(1);

  app.add_option("--mode", config.mode, "Search space: standard | anytime")
      ->check(CLI::IsMember({"standard", "anytime"}));
  app.add_option("--hidden", config.hidden, "GNN embedding size");
  app.add_option("--msg-hidden", config.msg_hidden, "Message MLP hidden width");
  app.add_option("--hyper-hidden", config.hyper_hidden, "Hypernet MLP hidden width");
  app.add_option("--channel-tile", config.channel_tile, "Generated weight slab channel width");
  app.add_option("--hyper-out-scale", config.hyper_out_scale,
                 "Init scale of the hypernet output layer");
  app.add_option("--scheme", config.scheme, "Propagation scheme: fb | sync")
      ->check(CLI::IsMember({"fb", "sync"}));
  app.add_option("--passes", config.passes, "Propagation steps (sweeps for fb)");
  app.add_flag("--handoff-every-step,!--handoff-first-step", config.handoff_every_step,
               "Deliver the stacked hand-off at every input-node update");
  app.add_flag("--share-params,!--no-share-params", config.share_params,
               "One GHN for all block positions");
  app.add_flag("--pass-embeddings,!--no-pass-embeddings", config.pass_embeddings,
               "Pass graph embeddings between stacked blocks");

  app.add_option("--train-n-max", config.train_n_max, "Nodes per block: upper bound in training");
  app.add_option("--eval-nodes", config.eval_nodes, "Nodes per block in evaluation candidates");
  app.add_option("--repeat", config.repeat, "Block instances per network");
  app.add_option("--reductions", config.reductions,
                 "1-based positions after which spatial halves (0 disables)");
  app.add_option("--channels", config.channels, "Initial channel width");
  app.add_option("--anytime-sizes", config.anytime_sizes, "Nodes per anytime block");
  app.add_option("--exits-per-block", config.exits_per_block, "Early exits per anytime block");

  app.add_option("--steps", config.steps, "GHN optimization steps");
  app.add_option("--batch-size", config.batch_size, "Training batch size");
  app.add_option("--lr", config.lr, "Initial learning rate (halved at 50% and 75%)");
  app.add_option("--checkpoint-every", config.checkpoint_every,
                 "Intermediate checkpoint cadence (0: final only)");

  app.add_option("--data-train", config.data_train, "Training sample count");
  app.add_option("--data-val", config.data_val, "Validation sample count");
  app.add_option("--classes", config.classes, "Class count");
  app.add_option("--image-size", config.image_size, "Square image extent");

  app.add_option("--out", config.out_dir, "Output directory");
  app.add_option("--data-prefix", config.data_prefix, "Dataset path prefix (default <out>/data)");
  app.add_option("--ckpt", config.ckpt, "Checkpoint file to evaluate");
  app.add_option("--resume", config.resume, "Checkpoint to continue training from");
  app.add_option("--arch", config.arch, "Architecture JSON (flops)");
  app.add_option("--from", config.from_dir, "Artifact directory for plotdata (default --out)");

  app.add_option("--search-m", config.search_m, "Candidates sampled by search");
  app.add_option("--search-k", config.search_k, "Top candidates kept");
  app.add_option("--truth-steps", config.truth_steps, "Ground-truth training steps");
  app.add_option("--truth-batch", config.truth_batch, "Ground-truth batch size");
  app.add_option("--truth-lr", config.truth_lr, "Ground-truth learning rate");
  app.add_option("--corr-n", config.corr_n, "Correlation benchmark sample count");
  app.add_option("--ablate-axis", config.ablate_axis,
                 "Ablation axis: nodes | steps | scheme | stacked")
      ->check(CLI::IsMember({"nodes", "steps", "scheme", "stacked"}));
  app.add_option("--ablate-grid", config.ablate_grid, "Ablation grid values");

  app.add_option("--seed", config.seed, "Run seed")->envname("GHN_SEED");
  app.add_option("--threads", config.threads, "Worker thread cap");

  for (const auto& [name, help] :
       std::initializer_list<std::pair<const char*, const char*>>{
           {"gen-data", "Write the desk-scale dataset files"},
           {"train", "Train the GHN and write checkpoints"},
           {"search", "Random search ranked by generated-weight accuracy"},
           {"correlate", "Predicted-vs-true accuracy correlation benchmark"},
           {"ablate", "Train one GHN per grid setting and compare correlation"},
           {"flops", "Per-block and total FLOP counts of a network"},
           {"plotdata", "Convert run artifacts into plot-ready CSV series"}}) {
    app.add_subcommand(name, help)->fallthrough();
  }
}

namespace {

GraphMode mode_of(const RunConfig& c) {
  return c.mode == "anytime" ? GraphMode::kAnytime : GraphMode::kStandard;
}

std::set<int> reduction_set(const RunConfig& c) {
  std::set<int> out;
  for (int r : c.reductions) {
    if (r > 0) out.insert(r);
  }
  return out;
}

GhnConfig ghn_config(const RunConfig& c) {
  GhnConfig g = GhnConfig::defaults(mode_of(c));
  g.hidden = c.hidden;
  g.msg_hidden = c.msg_hidden;
  g.hyper_hidden = c.hyper_hidden;
  g.channel_tile = c.channel_tile;
  g.handoff_every_step = c.handoff_every_step;
  g.hyper_out_scale = c.hyper_out_scale;
  return g;
}

PropagationScheme scheme_of(const RunConfig& c) {
  return c.scheme == "sync" ? PropagationScheme::synchronous(c.passes)
                            : PropagationScheme::forward_backward(c.passes);
}

NetworkSampleOptions sample_options(const RunConfig& c, int n_nodes) {
  NetworkSampleOptions s;
  s.mode = mode_of(c);
  s.n_nodes = n_nodes;
  s.repeat = c.repeat;
  s.reductions = reduction_set(c);
  s.channels = c.channels;
  s.anytime_sizes = c.anytime_sizes;
  s.exits_per_block = c.exits_per_block;
  return s;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.ghn = ghn_config(c);
  t.sample = sample_options(c, c.eval_nodes);
  t.scheme = scheme_of(c);
  t.steps = c.steps;
  t.batch_size = c.batch_size;
  t.lr = c.lr;
  t.n_max = c.train_n_max;
  t.pass_embeddings = c.pass_embeddings;
  t.share_params = c.share_params;
  t.seed = c.seed;
  return t;
}

SearchConfig search_config(const RunConfig& c) {
  SearchConfig s;
  s.sample = sample_options(c, c.eval_nodes);
  s.scheme = scheme_of(c);
  s.pass_embeddings = c.pass_embeddings;
  s.threads = c.threads;
  return s;
}

SgdTrainOptions truth_options(const RunConfig& c) {
  SgdTrainOptions t;
  t.steps = c.truth_steps;
  t.batch_size = c.truth_batch;
  t.lr = c.truth_lr;
  return t;
}

json run_config_json(const RunConfig& c) {
  json j;
  j["mode"] = c.mode;
  j["hidden"] = c.hidden;
  j["msg_hidden"] = c.msg_hidden;
  j["hyper_hidden"] = c.hyper_hidden;
  j["channel_tile"] = c.channel_tile;
  j["hyper_out_scale"] = c.hyper_out_scale;
  j["scheme"] = c.scheme;
  j["passes"] = c.passes;
  j["handoff_every_step"] = c.handoff_every_step;
  j["share_params"] = c.share_params;
  j["pass_embeddings"] = c.pass_embeddings;
  j["train_n_max"] = c.train_n_max;
  j["eval_nodes"] = c.eval_nodes;
  j["repeat"] = c.repeat;
  j["reductions"] = std::vector<int>(reduction_set(c).begin(), reduction_set(c).end());
  j["channels"] = c.channels;
  j["anytime_sizes"] = c.anytime_sizes;
  j["exits_per_block"] = c.exits_per_block;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["classes"] = c.classes;
  j["image_size"] = c.image_size;
  j["seed"] = c.seed;
  return j;
}

std::string data_prefix(const RunConfig& c) {
  return c.data_prefix.empty() ? c.out_dir + "/data" : c.data_prefix;
}

void ensure_out(const RunConfig& c) { fs::create_directories(c.out_dir); }

Dataset load_split(const RunConfig& c, const char* split) {
  const std::string path = data_prefix(c) + "." + split + ".bin";
  if (!fs::exists(path)) {
    throw ConfigError("dataset file " + path + " not found; run gen-data first");
  }
  return load_dataset(path);
}

Checkpoint load_required_ckpt(const RunConfig& c) {
  std::string path = c.ckpt;
  if (path.empty()) path = c.out_dir + "/ckpt.json";
  if (!fs::exists(path)) throw ConfigError("checkpoint " + path + " not found");
  Checkpoint ckpt = load_checkpoint(path);
  const GraphMode want = mode_of(c);
  if (ckpt.models[0].config.mode != want) {
    throw ConfigError("checkpoint mode does not match --mode " + c.mode);
  }
  for (GhnModel& m : ckpt.models) m.params().set_requires_grad(true);
  return ckpt;
}

json graph_json_array(const std::string& joined) {
  json arr = json::array();
  size_t start = 0;
  while (start < joined.size()) {
    size_t end = joined.find('\n', start);
    if (end == std::string::npos) end = joined.size();
    arr.push_back(json::parse(joined.substr(start, end - start)));
    start = end + 1;
  }
  return arr;
}

int cmd_gen_data(const RunConfig& c) {
  ensure_out(c);
  const Dataset train = make_texture_dataset(c.data_train, c.classes, c.image_size, c.image_size,
                                             Rng::derive(c.seed, 0x7121).next_u64());
  const Dataset val = make_texture_dataset(c.data_val, c.classes, c.image_size, c.image_size,
                                           Rng::derive(c.seed, 0x7122).next_u64());
  save_dataset(data_prefix(c) + ".train.bin", train);
  save_dataset(data_prefix(c) + ".val.bin", val);
  std::cout << "wrote " << data_prefix(c) << ".train.bin (" << train.count() << " samples), "
            << data_prefix(c) << ".val.bin (" << val.count() << " samples)\n";
  return 0;
}

int cmd_train(const RunConfig& c) {
  ensure_out(c);
  const Dataset train_data = load_split(c, "train");
  const TrainConfig tc = train_config(c);
  const std::string log_path = c.out_dir + "/train_log.jsonl";
  const std::string echo = run_config_json(c).dump();

  std::string log_text;
  auto on_step = [&](int step, double loss, double lr, const std::vector<GhnModel>& models,
                     const AdamState& opt) {
    json line;
    line["step"] = step;
    line["loss"] = loss;
    line["lr"] = lr;
    log_text += line.dump();
    log_text += "\n";
    if (c.checkpoint_every > 0 && (step + 1) % c.checkpoint_every == 0 &&
        step + 1 < tc.steps) {
      Checkpoint mid{models, opt, step + 1, echo};
      save_checkpoint(c.out_dir + "/ckpt_step" + std::to_string(step + 1) + ".json", mid);
    }
  };

  TrainResult result;
  if (!c.resume.empty()) {
    if (!fs::exists(c.resume)) throw ConfigError("resume checkpoint " + c.resume + " not found");
    result = resume_ghn(tc, train_data, load_checkpoint(c.resume), on_step);
  } else {
    result = train_ghn(tc, train_data, on_step);
  }

  Checkpoint final{std::move(result.models), std::move(result.opt), result.steps_done, echo};
  save_checkpoint(c.out_dir + "/ckpt.json", final);
  if (c.resume.empty()) {
    write_text_file(log_path, log_text);
  } else {
    append_text_file(log_path, log_text);
  }
  std::cout << "trained " << result.steps_done << " steps; checkpoint at " << c.out_dir
            << "/ckpt.json\n";
  return 0;
}

json report_json(const SearchReport& report, const RunConfig& c) {
  json j;
  j["schema"] = "ghn-search/1";
  j["config"] = run_config_json(c);
  j["seed"] = report.seed;
  j["m"] = report.m;
  j["k"] = report.k;
  j["timing_sec"] = report.elapsed_sec;
  j["top"] = report.top_hashes;
  j["candidates"] = json::array();
  for (const SearchCandidate& cand : report.candidates) {
    json cj;
    cj["hash"] = cand.hash;
    cj["graph"] = graph_json_array(cand.graph_json);
    cj["predicted_acc"] = cand.predicted_acc;
    cj["flops"] = cand.flops;
    cj["sample_seed"] = cand.sample_seed;
    json exits = json::array();
    for (const auto& [flops, acc] : cand.exit_curve) exits.push_back({flops, acc});
    cj["exits"] = exits;
    j["candidates"].push_back(cj);
  }
  return j;
}

int cmd_search(const RunConfig& c, bool with_truth) {
  ensure_out(c);
  const Dataset val = load_split(c, "val");
  const Checkpoint ckpt = load_required_ckpt(c);
  const SearchConfig sc = search_config(c);

  json out;
  if (with_truth) {
    const Dataset train_data = load_split(c, "train");
    const RankComparison cmp = compare_top_vs_random(ckpt.models, sc, train_data, val,
                                                     c.search_m, c.search_k, truth_options(c),
                                                     c.seed);
    out = report_json(cmp.report, c);
    json comparison;
    comparison["top_true"] = cmp.top_true;
    comparison["random_true"] = cmp.random_true;
    comparison["top_mean"] = cmp.top_mean;
    comparison["random_mean"] = cmp.random_mean;
    out["comparison"] = comparison;
    std::cout << "top-" << c.search_k << " mean true acc " << cmp.top_mean << " vs random "
              << cmp.random_mean << "\n";
  } else {
    const SearchReport report = random_search(ckpt.models, sc, val, c.search_m, c.search_k,
                                              c.seed);
    out = report_json(report, c);
    std::cout << "best predicted acc " << report.candidates.front().predicted_acc << " ("
              << report.candidates.front().hash << ")\n";
  }
  write_text_file(c.out_dir + "/search_report.json", out.dump(2) + "\n");
  return 0;
}

int cmd_correlate(const RunConfig& c) {
  ensure_out(c);
  const Dataset train_data = load_split(c, "train");
  const Dataset val = load_split(c, "val");
  const Checkpoint ckpt = load_required_ckpt(c);
  const CorrelationReport report = correlation_benchmark(
      ckpt.models, search_config(c), train_data, val, c.corr_n, truth_options(c), c.seed);

  std::string lines;
  for (const CorrelationEntry& e : report.entries) {
    json rec;
    rec["graph-hash"] = e.hash;
    rec["predicted-acc"] = e.predicted;
    rec["true-acc"] = e.truth;
    rec["flops"] = e.flops;
    rec["seed"] = e.sample_seed;
    lines += rec.dump();
    lines += "\n";
  }
  write_text_file(c.out_dir + "/correlation.jsonl", lines);

  json summary;
  summary["schema"] = "ghn-correlation/1";
  summary["config"] = run_config_json(c);
  summary["n"] = report.n;
  summary["r_all"] = report.r_all;
  summary["r_top"] = report.r_top;
  summary["p_all"] = report.p_all;
  write_text_file(c.out_dir + "/correlation.json", summary.dump(2) + "\n");
  std::cout << "r_all=" << report.r_all << " r_top=" << report.r_top << " p=" << report.p_all
            << " (n=" << report.n << ")\n";
  return 0;
}

int cmd_ablate(const RunConfig& c) {
  ensure_out(c);
  const Dataset train_data = load_split(c, "train");
  const Dataset val = load_split(c, "val");

  AblationSetup setup;
  setup.train = train_config(c);
  setup.search = search_config(c);
  setup.truth = truth_options(c);
  setup.corr_n = c.corr_n;

  const auto rows = ablate(ablation_axis_from_name(c.ablate_axis), c.ablate_grid, setup,
                           train_data, val);
  CsvWriter csv({"setting", "r_all", "r_top"});
  for (const AblationRow& row : rows) {
    csv.add_row({row.setting, format_double(row.r_all), format_double(row.r_top)});
  }
  const std::string path = c.out_dir + "/ablation_" + c.ablate_axis + ".csv";
  csv.save(path);
  std::cout << "wrote " << path << " (" << rows.size() << " settings)\n";
  return 0;
}

int cmd_flops(const RunConfig& c) {
  ensure_out(c);
  NetworkSpec spec;
  if (!c.arch.empty()) {
    spec = stack_blocks(deserialize(read_text_file(c.arch)), c.repeat, reduction_set(c),
                        c.channels);
  } else {
    spec = sample_network_spec(sample_options(c, c.eval_nodes), c.seed);
  }
  const NetworkPlan plan = plan_network(spec, 1, c.image_size, c.image_size, c.classes);

  CsvWriter csv({"module", "flops"});
  int64_t total = 0;
  for (size_t mi = 0; mi < plan.modules.size(); ++mi) {
    int64_t module_flops = 0;
    for (const NodePlan& np : plan.modules[mi].nodes) module_flops += np.flops;
    total += module_flops;
    std::string label = mi == 0 ? "stem"
                        : (mi + 1 == plan.modules.size() ? "head"
                                                         : "block" + std::to_string(mi));
    std::cout << label << " " << module_flops << "\n";
    csv.add_row({label, std::to_string(module_flops)});
  }
  std::cout << "total " << total << "\n";
  csv.add_row({"total", std::to_string(total)});
  for (const ExitPoint& e : plan.exits) {
    csv.add_row({"exit_m" + std::to_string(e.module) + "_n" + std::to_string(e.node),
                 std::to_string(e.flops)});
  }
  csv.save(c.out_dir + "/flops.csv");
  return 0;
}

int cmd_plotdata(const RunConfig& c) {
  ensure_out(c);
  const std::string from = c.from_dir.empty() ? c.out_dir : c.from_dir;
  std::vector<std::string> written;

  const std::string corr_path = from + "/correlation.jsonl";
  if (fs::exists(corr_path)) {
    CsvWriter csv({"predicted_acc", "true_acc"});
    std::istringstream is(read_text_file(corr_path));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      csv.add_row({format_double(rec.at("predicted-acc").get<double>()),
                   format_double(rec.at("true-acc").get<double>())});
    }
    csv.save(c.out_dir + "/plot_scatter.csv");
    written.push_back("plot_scatter.csv");
  }

  const std::string report_path = from + "/search_report.json";
  if (fs::exists(report_path)) {
    const json report = json::parse(read_text_file(report_path));
    if (report.contains("comparison")) {
      CsvWriter csv({"group", "rank", "true_acc"});
      int rank = 0;
      for (const json& v : report["comparison"]["top_true"]) {
        csv.add_row({"top", std::to_string(rank++), format_double(v.get<double>())});
      }
      rank = 0;
      for (const json& v : report["comparison"]["random_true"]) {
        csv.add_row({"random", std::to_string(rank++), format_double(v.get<double>())});
      }
      csv.save(c.out_dir + "/plot_rank_compare.csv");
      written.push_back("plot_rank_compare.csv");
    }
    const json& candidates = report.at("candidates");
    if (!candidates.empty() && candidates[0].at("exits").size() > 1) {
      CsvWriter csv({"flops", "accuracy"});
      for (const json& point : candidates[0]["exits"]) {
        csv.add_row({std::to_string(point[0].get<int64_t>()),
                     format_double(point[1].get<double>())});
      }
      csv.save(c.out_dir + "/plot_anytime.csv");
      written.push_back("plot_anytime.csv");
    }
  }

  for (const char* axis : {"nodes", "steps", "scheme", "stacked"}) {
    const std::string path = from + "/ablation_" + std::string(axis) + ".csv";
    if (fs::exists(path)) {
      write_text_file(c.out_dir + "/plot_ablation_" + axis + ".csv", read_text_file(path));
      written.push_back("plot_ablation_" + std::string(axis) + ".csv");
    }
  }

  if (written.empty()) {
    throw IoError("plotdata: no artifacts found under " + from);
  }
  for (const std::string& name : written) std::cout << "wrote " << c.out_dir << "/" << name << "\n";
  return 0;
}

}  // namespace

int run_command(App& app) {
  const RunConfig& c = app.config;
  if (app.command == "gen-data") return cmd_gen_data(c);
  if (app.command == "train") return cmd_train(c);
  if (app.command == "search") return cmd_search(c, c.truth_steps > 0 && c.search_m > c.search_k);
  if (app.command == "correlate") return cmd_correlate(c);
  if (app.command == "ablate") return cmd_ablate(c);
  if (app.command == "flops") return cmd_flops(c);
  if (app.command == "plotdata") return cmd_plotdata(c);
  throw ConfigError("unknown command " + app.command);
}

int main_entry(int argc, const char* const* argv) {
  App app;
  try {
    app.app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::CallForHelp& e) {
    app.app.exit(e);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.app.exit(e);
    return 2;
  }
  const auto subs = app.app.get_subcommands();
  app.command = subs.empty() ? "" : subs[0]->get_name();
  try {
    return run_command(app);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace ghn::cli
