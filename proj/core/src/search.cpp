#include "ghnsearch/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ghnsearch/parallel.hpp"

namespace ghn {

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw StatisticsError("pearson_r: length mismatch");
  const size_t n = xs.size();
  if (n < 2) throw StatisticsError("pearson_r: need at least 2 points");
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw StatisticsError("pearson_r: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

namespace {

// Regularized incomplete beta via the standard continued fraction.
double betacf(double a, double b, double x) {
  const int max_iter = 300;
  const double eps = 3e-14, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

double ibeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
               b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double pearson_p_one_sided(double r, int64_t n) {
  if (n < 3) throw StatisticsError("pearson_p_one_sided: need n >= 3");
  if (r >= 1.0) return 0.0;
  if (r <= -1.0) return 1.0;
  const double dof = static_cast<double>(n - 2);
  const double t = r * std::sqrt(dof / (1.0 - r * r));
  const double tail = 0.5 * ibeta(dof / 2.0, 0.5, dof / (dof + t * t));
  return t >= 0.0 ? tail : 1.0 - tail;
}

double anytime_auc(std::vector<std::pair<double, double>> points) {
  if (points.size() < 2) throw InputError("anytime_auc: need at least 2 points");
  std::sort(points.begin(), points.end());
  for (size_t i = 1; i < points.size(); ++i) {
    if (points[i].first == points[i - 1].first) {
      throw InputError("anytime_auc: duplicate FLOP abscissa " +
                       std::to_string(points[i].first));
    }
  }
  const double span = points.back().first - points.front().first;
  double area = 0.0;
  for (size_t i = 1; i < points.size(); ++i) {
    const double dx = points[i].first - points[i - 1].first;
    area += 0.5 * (points[i].second + points[i - 1].second) * dx;
  }
  return area / span;
}

namespace {

std::string spec_graph_json(const NetworkSpec& spec) {
  std::string out;
  for (const ArchGraph& g : spec.blocks) {
    if (!out.empty()) out += "\n";
    out += serialize(g);
  }
  return out;
}

std::string spec_hash(const NetworkSpec& spec) {
  if (spec.blocks.size() == 1) return graph_hash(spec.blocks[0]);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const ArchGraph& g : spec.blocks) {
    for (char c : graph_hash(g)) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

uint64_t candidate_seed(uint64_t seed, int64_t index) {
  return Rng::derive(seed, 0xca4d, static_cast<uint64_t>(index)).next_u64();
}

}  // namespace

SearchReport random_search(const std::vector<GhnModel>& models, const SearchConfig& cfg,
                           const Dataset& val, int m, int k, uint64_t seed) {
  if (m < 1) throw InputError("random_search: m must be >= 1");
  if (m < k) throw InputError("random_search: m < k");
  const auto start = std::chrono::steady_clock::now();

  std::vector<SearchCandidate> candidates(static_cast<size_t>(m));
  parallel_for(m, cfg.threads, [&](int64_t i) {
    const uint64_t cseed = candidate_seed(seed, i);
    const NetworkSpec spec = sample_network_spec(cfg.sample, cseed);
    const EvalResult eval =
        eval_with_generated(models, spec, val, cfg.scheme, cfg.pass_embeddings, cfg.eval_batch);
    SearchCandidate& cand = candidates[static_cast<size_t>(i)];
    cand.hash = spec_hash(spec);
    cand.graph_json = spec_graph_json(spec);
    cand.predicted_acc = eval.accuracy;
    cand.exit_curve = eval.exit_curve;
    cand.flops = eval.exit_curve.back().first;
    cand.sample_seed = cseed;
  });

  std::sort(candidates.begin(), candidates.end(),
            [](const SearchCandidate& a, const SearchCandidate& b) {
              if (a.predicted_acc != b.predicted_acc) return a.predicted_acc > b.predicted_acc;
              return a.hash < b.hash;
            });

  SearchReport report;
  report.candidates = std::move(candidates);
  report.m = m;
  report.k = std::min(k, m);
  report.seed = seed;
  for (int i = 0; i < report.k; ++i) {
    report.top_hashes.push_back(report.candidates[static_cast<size_t>(i)].hash);
  }
  report.elapsed_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

CorrelationReport correlation_from_entries(std::vector<CorrelationEntry> entries) {
  CorrelationReport report;
  report.n = static_cast<int>(entries.size());
  report.entries = std::move(entries);
  std::vector<double> preds, truths;
  for (const CorrelationEntry& e : report.entries) {
    preds.push_back(e.predicted);
    truths.push_back(e.truth);
  }
  report.r_all = pearson_r(preds, truths);
  report.p_all = pearson_p_one_sided(report.r_all, report.n);

  // Top half by TRUE accuracy (the above-average architectures).
  std::vector<CorrelationEntry> sorted = report.entries;
  std::sort(sorted.begin(), sorted.end(),
            [](const CorrelationEntry& a, const CorrelationEntry& b) { return a.truth > b.truth; });
  const size_t half = sorted.size() / 2;
  if (half >= 2) {
    std::vector<double> tp, tt;
    for (size_t i = 0; i < half; ++i) {
      tp.push_back(sorted[i].predicted);
      tt.push_back(sorted[i].truth);
    }
    report.r_top = pearson_r(tp, tt);
  } else {
    report.r_top = report.r_all;
  }
  return report;
}

CorrelationReport correlation_benchmark(const std::vector<GhnModel>& models,
                                        const SearchConfig& cfg, const Dataset& train,
                                        const Dataset& val, int n,
                                        const SgdTrainOptions& truth, uint64_t seed) {
  if (n < 2) throw InputError("correlation_benchmark: need n >= 2");
  std::vector<CorrelationEntry> entries(static_cast<size_t>(n));
  parallel_for(n, cfg.threads, [&](int64_t i) {
    const uint64_t cseed = candidate_seed(seed, i);
    const NetworkSpec spec = sample_network_spec(cfg.sample, cseed);
    CorrelationEntry& e = entries[static_cast<size_t>(i)];
    e.hash = spec_hash(spec);
    e.graph_json = spec_graph_json(spec);
    e.sample_seed = cseed;
    e.predicted =
        eval_with_generated(models, spec, val, cfg.scheme, cfg.pass_embeddings, cfg.eval_batch)
            .accuracy;
    e.truth = sgd_train_candidate(spec, train, val, truth, cseed);
    e.flops =
        count_flops(spec, val.channels, val.height, val.width, val.classes).back();
  });
  return correlation_from_entries(std::move(entries));
}

RankComparison compare_top_vs_random(const std::vector<GhnModel>& models,
                                     const SearchConfig& cfg, const Dataset& train,
                                     const Dataset& val, int m, int k,
                                     const SgdTrainOptions& truth, uint64_t seed) {
  RankComparison result;
  result.report = random_search(models, cfg, val, m, k, seed);

  // The predicted top-k, plus the first k in sampling order as the random
  // baseline (an unbiased draw from the same distribution).
  std::vector<uint64_t> to_train;
  for (const std::string& hash : result.report.top_hashes) {
    for (const SearchCandidate& c : result.report.candidates) {
      if (c.hash == hash) {
        to_train.push_back(c.sample_seed);
        break;
      }
    }
  }
  for (int i = 0; i < result.report.k; ++i) to_train.push_back(candidate_seed(seed, i));

  std::vector<double> accs(to_train.size());
  parallel_for(static_cast<int64_t>(to_train.size()), cfg.threads, [&](int64_t i) {
    const NetworkSpec spec = sample_network_spec(cfg.sample, to_train[static_cast<size_t>(i)]);
    accs[static_cast<size_t>(i)] =
        sgd_train_candidate(spec, train, val, truth, to_train[static_cast<size_t>(i)]);
  });

  const size_t k_actual = static_cast<size_t>(result.report.k);
  result.top_true.assign(accs.begin(), accs.begin() + static_cast<int64_t>(k_actual));
  result.random_true.assign(accs.begin() + static_cast<int64_t>(k_actual), accs.end());
  for (double a : result.top_true) result.top_mean += a;
  for (double a : result.random_true) result.random_mean += a;
  result.top_mean /= static_cast<double>(result.top_true.size());
  result.random_mean /= static_cast<double>(result.random_true.size());
  return result;
}

AblationAxis ablation_axis_from_name(const std::string& name) {
  if (name == "nodes") return AblationAxis::kNodes;
  if (name == "steps") return AblationAxis::kSteps;
  if (name == "scheme") return AblationAxis::kScheme;
  if (name == "stacked") return AblationAxis::kStacked;
  throw InputError("unknown ablation axis \"" + name + "\"");
}

namespace {

AblationRow run_setting(std::string label, const TrainConfig& tc, const AblationSetup& base,
                        const Dataset& train, const Dataset& val) {
  const TrainResult trained = train_ghn(tc, train);
  SearchConfig sc = base.search;
  sc.sample = tc.sample;
  sc.scheme = tc.scheme;
  sc.pass_embeddings = tc.pass_embeddings;
  const CorrelationReport rep = correlation_benchmark(trained.models, sc, train, val,
                                                      base.corr_n, base.truth, tc.seed + 1);
  return AblationRow{std::move(label), rep.r_all, rep.r_top};
}

}  // namespace

std::vector<AblationRow> ablate(AblationAxis axis, const std::vector<int>& grid,
                                const AblationSetup& base, const Dataset& train,
                                const Dataset& val) {
  if (axis != AblationAxis::kStacked && grid.empty()) throw InputError("ablate: empty grid");
  std::vector<AblationRow> rows;
  switch (axis) {
    case AblationAxis::kNodes:
      for (int n : grid) {
        TrainConfig tc = base.train;
        tc.n_max = n;
        rows.push_back(run_setting("N=" + std::to_string(n), tc, base, train, val));
      }
      break;
    case AblationAxis::kSteps:
      for (int t : grid) {
        TrainConfig tc = base.train;
        tc.scheme.steps = t;
        rows.push_back(run_setting("T=" + std::to_string(t), tc, base, train, val));
      }
      break;
    case AblationAxis::kScheme:
      for (const SchemeKind kind : {SchemeKind::kSynchronous, SchemeKind::kForwardBackward}) {
        for (int t : grid) {
          TrainConfig tc = base.train;
          tc.scheme.kind = kind;
          tc.scheme.steps = t;
          const std::string label =
              (kind == SchemeKind::kSynchronous ? "sync,T=" : "fb,T=") + std::to_string(t);
          rows.push_back(run_setting(label, tc, base, train, val));
        }
      }
      break;
    case AblationAxis::kStacked: {
      const struct {
        const char* label;
        bool share, pass;
      } variants[] = {{"independent", false, false},
                      {"pe_only", false, true},
                      {"sp_pe", true, true}};
      for (const auto& v : variants) {
        TrainConfig tc = base.train;
        tc.share_params = v.share;
        tc.pass_embeddings = v.pass;
        rows.push_back(run_setting(v.label, tc, base, train, val));
      }
      break;
    }
  }
  return rows;
}

}  // namespace ghn
