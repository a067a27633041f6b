#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "srdo/analysis.hpp"
#include "srdo/config.hpp"
#include "srdo/engine.hpp"
#include "srdo/version.hpp"

namespace srdo {

struct SeriesStats {
  std::vector<double> mean, median, iqr;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty set");
  if (sorted.size() == 1) return sorted[0];
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

/// Elementwise per-iteration statistics across equal-length traces.
inline std::pair<SeriesStats, SeriesStats> aggregate(const std::vector<TrialTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("aggregate: no traces");
  const std::size_t len = traces.front().records.size();
  for (const auto& t : traces)
    if (t.records.size() != len)
      throw std::invalid_argument("aggregate: trace length mismatch");
  SeriesStats ae, ce;
  for (std::size_t k = 0; k < len; ++k) {
    std::vector<double> a, c;
    a.reserve(traces.size());
    c.reserve(traces.size());
    for (const auto& t : traces) {
      a.push_back(t.records[k].ae);
      c.push_back(t.records[k].ce);
    }
    std::sort(a.begin(), a.end());
    std::sort(c.begin(), c.end());
    auto push = [](SeriesStats& s, const std::vector<double>& v) {
      double sum = 0.0;
      for (double x : v) sum += x;
      s.mean.push_back(sum / static_cast<double>(v.size()));
      s.median.push_back(detail::quantile_sorted(v, 0.5));
      s.iqr.push_back(detail::quantile_sorted(v, 0.75) - detail::quantile_sorted(v, 0.25));
    };
    push(ae, a);
    push(ce, c);
  }
  return {ae, ce};
}

struct ExperimentResult {
  std::vector<TrialTrace> srdo;
  std::vector<std::pair<BaselineMode, std::vector<TrialTrace>>> baselines;
  std::vector<std::uint64_t> trial_seeds;
  ResidualAudit residual_audit;           // pooled over all SRDO trials
  int rate1_violations = 0;               // scenario-1 envelope violations
  int rate1_vacuous_trials = 0;
  std::filesystem::path out_dir;
};

inline const char* baseline_label(BaselineMode m) {
  return m == BaselineMode::FullNoFailures ? "full_no_failures" : "same_failures";
}

inline std::uint64_t trial_seed_of(const ExperimentConfig& cfg, int trial) {
  return stream_key(cfg.seed, "trial", static_cast<std::uint64_t>(trial));
}

/// Runs one SRDO trial (fresh problem and coding scheme per trial seed),
/// fills the envelope columns and returns the trace.
inline TrialTrace run_one_trial(const ExperimentConfig& cfg, const RunParams& params, int trial,
                                ResidualAudit* audit_out = nullptr,
                                RateEnvelopeReport* rate_out = nullptr) {
  const std::uint64_t ts = trial_seed_of(cfg, trial);
  PartitionedProblem problem = generate_least_squares(cfg.n_dim, cfg.mbar, cfg.partitions,
                                                      cfg.workers,
                                                      stream_key(ts, "problem"));
  const CodingScheme scheme = make_coding_scheme(cfg.workers, cfg.stragglers,
                                                 stream_key(ts, "codec"));
  std::vector<CodingScheme> schemes(static_cast<std::size_t>(cfg.partitions), scheme);
  TrialTrace trace = run_trial(params, problem, schemes, ts);

  // The engine's consensus operator has row sums exactly 1 (see README on
  // weights), so the Assumption-2 leakage entering the rate formulas is 0 for
  // the executed system; the envelopes are evaluated at that effective value
  // and vacuous reports are first-class outputs.
  const double mu_effective = 0.0;
  RateEnvelopeReport rate = overlay_rate_scenario1(trace, problem, schemes, mu_effective,
                                                   cfg.gamma0);
  if (rate_out) *rate_out = rate;
  const double gamma_max = (1.0 - cfg.gamma0) / cfg.partitions;
  // Earliest non-vacuous kbar3 for the general overlay, if any.
  for (int kbar3 = cfg.delay_bound; kbar3 < static_cast<int>(trace.records.size()); ++kbar3) {
    RhoEta3 re = overlay_rate_general(trace, problem, schemes, mu_effective, cfg.gamma0,
                                      gamma_max, problem.misaligned_partition_count(),
                                      problem.max_partition_minimizer_distance(), kbar3);
    if (!re.vacuous) break;
  }
  if (audit_out)
    *audit_out = audit_residual_bound(trace, problem, schemes, cfg.delay_bound);
  return trace;
}

/// Baseline companion of run_one_trial (same per-trial problem and seeds).
inline TrialTrace run_one_baseline(const ExperimentConfig& cfg, const RunParams& params,
                                   int trial, BaselineMode mode) {
  const std::uint64_t ts = trial_seed_of(cfg, trial);
  PartitionedProblem problem = generate_least_squares(cfg.n_dim, cfg.mbar, cfg.partitions,
                                                      cfg.workers, stream_key(ts, "problem"));
  return run_centralized_baseline(params, problem, mode, ts);
}

/// Full reproduction harness: R trials (bounded worker pool), per-trial CSVs,
/// aggregate CSV, manifest. Deterministic in (config, seed); byte-identical
/// re-runs.
inline ExperimentResult run_experiment(ExperimentConfig cfg, int jobs = 0) {
  cfg.validate();
  ExperimentResult result;
  result.out_dir = cfg.out_dir;
  std::filesystem::create_directories(result.out_dir);

  const RunParams params = cfg.run_params();
  const auto modes = cfg.baseline_modes();
  const int r = cfg.trials;
  result.srdo.resize(static_cast<std::size_t>(r));
  for (auto m : modes)
    result.baselines.emplace_back(m, std::vector<TrialTrace>(static_cast<std::size_t>(r)));
  result.trial_seeds.resize(static_cast<std::size_t>(r));
  std::vector<ResidualAudit> audits(static_cast<std::size_t>(r));
  std::vector<RateEnvelopeReport> rates(static_cast<std::size_t>(r));

  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs <= 0) jobs = 1;
  jobs = std::min(jobs, r);

  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      const int t = next.fetch_add(1);
      if (t >= r) return;
      result.trial_seeds[static_cast<std::size_t>(t)] = trial_seed_of(cfg, t);
      result.srdo[static_cast<std::size_t>(t)] =
          run_one_trial(cfg, params, t, &audits[static_cast<std::size_t>(t)],
                        &rates[static_cast<std::size_t>(t)]);
      const std::uint64_t ts = trial_seed_of(cfg, t);
      PartitionedProblem problem = generate_least_squares(cfg.n_dim, cfg.mbar, cfg.partitions,
                                                          cfg.workers,
                                                          stream_key(ts, "problem"));
      for (auto& [mode, traces] : result.baselines)
        traces[static_cast<std::size_t>(t)] =
            run_centralized_baseline(params, problem, mode, ts);
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  for (int t = 0; t < r; ++t) {
    const auto& a = audits[static_cast<std::size_t>(t)];
    result.residual_audit.violations += a.violations;
    result.residual_audit.min_slack = std::min(result.residual_audit.min_slack, a.min_slack);
    if (rates[static_cast<std::size_t>(t)].vacuous)
      ++result.rate1_vacuous_trials;
    else
      result.rate1_violations += rates[static_cast<std::size_t>(t)].violations;
  }

  // Per-trial CSVs.
  auto trial_name = [](const std::string& label, int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_trial_%03d.csv", t);
    return label + buf;
  };
  for (int t = 0; t < r; ++t)
    result.srdo[static_cast<std::size_t>(t)].write_csv(
        (result.out_dir / trial_name("srdo", t)).string());
  for (const auto& [mode, traces] : result.baselines)
    for (int t = 0; t < r; ++t)
      traces[static_cast<std::size_t>(t)].write_csv(
          (result.out_dir / trial_name(baseline_label(mode), t)).string());

  // Aggregate CSV: per-iteration mean/median/IQR of AE and CE per series.
  {
    std::ofstream out(result.out_dir / "aggregate.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write aggregate.csv");
    std::vector<std::pair<std::string, const std::vector<TrialTrace>*>> series;
    series.emplace_back("srdo", &result.srdo);
    for (const auto& [mode, traces] : result.baselines)
      series.emplace_back(baseline_label(mode), &traces);
    out << "k";
    for (const auto& [label, _] : series)
      out << ',' << label << "_AE_mean," << label << "_AE_median," << label << "_AE_iqr,"
          << label << "_CE_mean," << label << "_CE_median," << label << "_CE_iqr";
    out << '\n';
    std::vector<std::pair<SeriesStats, SeriesStats>> stats;
    for (const auto& [_, traces] : series) stats.push_back(aggregate(*traces));
    const std::size_t len = result.srdo.front().records.size();
    for (std::size_t k = 0; k < len; ++k) {
      out << k;
      for (const auto& [ae, ce] : stats)
        out << ',' << format_double(ae.mean[k]) << ',' << format_double(ae.median[k]) << ','
            << format_double(ae.iqr[k]) << ',' << format_double(ce.mean[k]) << ','
            << format_double(ce.median[k]) << ',' << format_double(ce.iqr[k]);
      out << '\n';
    }
  }

  // Manifest: config hash, seeds, tool version, warnings. No timestamps.
  {
    nlohmann::ordered_json manifest;
    manifest["tool_version"] = kToolVersion;
    manifest["config_hash"] = config_hash(cfg);
    manifest["master_seed"] = cfg.seed;
    manifest["trials"] = cfg.trials;
    manifest["trial_seeds"] = result.trial_seeds;
    manifest["rng"] = cfg.rng;
    manifest["warnings"] = cfg.warnings;
    nlohmann::ordered_json cfgj;
    std::stringstream canon(canonical_config_text(cfg));
    std::string line;
    while (std::getline(canon, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) cfgj[line.substr(0, eq)] = line.substr(eq + 1);
    }
    manifest["config"] = cfgj;
    std::ofstream out(result.out_dir / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest.json");
    out << manifest.dump(2) << '\n';
  }
  return result;
}

}  // namespace srdo
