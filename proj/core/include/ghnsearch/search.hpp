#pragma once

#include <span>
#include <string>
#include <vector>

#include "ghnsearch/candidate.hpp"
#include "ghnsearch/dataset.hpp"
#include "ghnsearch/trainer.hpp"

namespace ghn {

/// Sample Pearson correlation. Throws StatisticsError on fewer than two
/// points or zero variance in either argument.
double pearson_r(std::span<const double> xs, std::span<const double> ys);

/// One-sided p-value for r > 0 under the t distribution with n-2 dof.
double pearson_p_one_sided(double r, int64_t n);

/// Trapezoidal area under an accuracy-vs-FLOPs curve, normalized by the FLOP
/// span so accuracies in [0,1] give an AUC in [0,1]. Points need not arrive
/// sorted; duplicate FLOP abscissae are an error.
double anytime_auc(std::vector<std::pair<double, double>> points);

struct SearchConfig {
  NetworkSampleOptions sample;
  PropagationScheme scheme = PropagationScheme::forward_backward(5);
  bool pass_embeddings = true;
  int eval_batch = 100;
  int threads = 1;
};

struct SearchCandidate {
  std::string hash;
  std::string graph_json;  // serialized block(s), newline-joined
  double predicted_acc = 0.0;
  int64_t flops = 0;
  std::vector<std::pair<int64_t, double>> exit_curve;
  uint64_t sample_seed = 0;
};

struct SearchReport {
  std::vector<SearchCandidate> candidates;  // predicted-acc descending
  std::vector<std::string> top_hashes;      // best min(k, m)
  int m = 0, k = 0;
  uint64_t seed = 0;
  double elapsed_sec = 0.0;
};

/// Sample m candidates, score each with generated weights on the validation
/// split, rank descending (ties broken by graph hash). Deterministic per
/// seed; candidate evaluations fan out over `threads`.
SearchReport random_search(const std::vector<GhnModel>& models, const SearchConfig& cfg,
                           const Dataset& val, int m, int k, uint64_t seed);

struct CorrelationEntry {
  std::string hash;
  std::string graph_json;
  double predicted = 0.0;
  double truth = 0.0;
  int64_t flops = 0;
  uint64_t sample_seed = 0;
};

struct CorrelationReport {
  std::vector<CorrelationEntry> entries;
  double r_all = 0.0;   // Pearson over every pair
  double r_top = 0.0;   // Pearson over the top half by true accuracy
  double p_all = 1.0;   // one-sided p for r_all > 0
  int n = 0;
};

/// Correlation statistics from already-scored pairs (predicted, true).
CorrelationReport correlation_from_entries(std::vector<CorrelationEntry> entries);

/// Sample n fresh candidates; predicted accuracy from generated weights, true
/// accuracy from the ground-truth trainer.
CorrelationReport correlation_benchmark(const std::vector<GhnModel>& models,
                                        const SearchConfig& cfg, const Dataset& train,
                                        const Dataset& val, int n,
                                        const SgdTrainOptions& truth, uint64_t seed);

struct RankComparison {
  std::vector<double> top_true;     // ground-truth accuracy of the predicted top-k
  std::vector<double> random_true;  // ground-truth accuracy of a random k
  double top_mean = 0.0;
  double random_mean = 0.0;
  SearchReport report;
};

/// The random-vs-top experiment: ground-truth the search's top-k against k
/// random candidates (the first k in sampling order).
RankComparison compare_top_vs_random(const std::vector<GhnModel>& models,
                                     const SearchConfig& cfg, const Dataset& train,
                                     const Dataset& val, int m, int k,
                                     const SgdTrainOptions& truth, uint64_t seed);

enum class AblationAxis { kNodes, kSteps, kScheme, kStacked };

AblationAxis ablation_axis_from_name(const std::string& name);

struct AblationRow {
  std::string setting;
  double r_all = 0.0;
  double r_top = 0.0;
};

struct AblationSetup {
  TrainConfig train;
  SearchConfig search;
  SgdTrainOptions truth;
  int corr_n = 10;
};

/// Train one GHN per grid setting (shared seed) and benchmark its
/// correlation. Axes: nodes (n_max), steps (propagation budget), scheme
/// (synchronous vs forward-backward x grid), stacked (independent / PE-only /
/// SP+PE; grid ignored).
std::vector<AblationRow> ablate(AblationAxis axis, const std::vector<int>& grid,
                                const AblationSetup& base, const Dataset& train,
                                const Dataset& val);

}  // namespace ghn
