// Command-line reproduction harness: experiment runner, codec verifier,
// trace auditor and bound-envelope reporter.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "srdo/analysis.hpp"
#include "srdo/config.hpp"
#include "srdo/experiment.hpp"
#include "srdo/version.hpp"

namespace {

int cmd_run(const std::string& config_path, int trials, int iters, long long seed,
            const std::string& out, int jobs) {
  srdo::ExperimentConfig cfg = srdo::load_config(config_path);
  if (trials > 0) cfg.trials = trials;
  if (iters > 0) cfg.iterations = iters;
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (!out.empty()) cfg.out_dir = out;
  cfg.validate();
  for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << "\n";

  srdo::ExperimentResult result = srdo::run_experiment(cfg, jobs);
  const auto [ae, ce] = srdo::aggregate(result.srdo);
  std::cout << "wrote " << result.out_dir.string() << " (" << cfg.trials << " trials, "
            << cfg.iterations << " iterations)\n";
  std::cout << "final median AE=" << srdo::format_double(ae.median.back())
            << " CE=" << srdo::format_double(ce.median.back()) << "\n";
  std::cout << "residual audit: " << result.residual_audit.violations << " violations"
            << ", min relative slack " << srdo::format_double(result.residual_audit.min_slack)
            << "\n";
  if (result.rate1_vacuous_trials == cfg.trials)
    std::cout << "scenario-1 rate envelope: vacuous at these parameters (logged)\n";
  else
    std::cout << "scenario-1 rate envelope: " << result.rate1_violations << " violations\n";
  return result.residual_audit.violations == 0 ? 0 : 1;
}

int cmd_verify_codec(int n, int s, int seeds, const std::string& dump_dir) {
  using namespace srdo;
  double worst = 0.0;
  for (int seed = 0; seed < seeds; ++seed) {
    const CodingScheme scheme = make_coding_scheme(n, s, static_cast<std::uint64_t>(seed) + 1);
    const VerifyResult v = verify_scheme(scheme.A, scheme.B, 1e-8);
    worst = std::max(worst, v.max_deviation);
    if (!v.ok) {
      std::cout << "FAIL seed=" << seed + 1 << " max deviation "
                << format_double(v.max_deviation) << "\n";
      return 1;
    }
    if (!dump_dir.empty()) {
      std::filesystem::create_directories(dump_dir);
      const std::string tag = "_n" + std::to_string(n) + "_s" + std::to_string(s) + "_seed" +
                              std::to_string(seed + 1) + ".csv";
      write_matrix_csv(scheme.B, dump_dir + "/B" + tag);
      write_matrix_csv(scheme.A, dump_dir + "/A" + tag);
    }
  }
  std::cout << "OK n=" << n << " s=" << s << " seeds=" << seeds << " max deviation "
            << format_double(worst) << "\n";
  if (!dump_dir.empty()) std::cout << "wrote encoder/decoder CSVs to " << dump_dir << "\n";
  return 0;
}

int cmd_audit(const std::string& trace_path, const std::string& config_path, int trial) {
  using namespace srdo;
  ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  const RunParams params = cfg.run_params();
  ResidualAudit audit;
  TrialTrace trace = run_one_trial(cfg, params, trial, &audit);

  // Bind the audit to the file: the deterministic re-run must reproduce it.
  std::ifstream in(trace_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace: " + trace_path);
  std::stringstream disk;
  disk << in.rdbuf();
  const std::string tmp = trace_path + ".rerun";
  trace.write_csv(tmp);
  std::ifstream in2(tmp, std::ios::binary);
  std::stringstream rerun;
  rerun << in2.rdbuf();
  std::remove(tmp.c_str());
  if (disk.str() != rerun.str()) {
    std::cout << "MISMATCH: trace file does not match the deterministic re-run of trial "
              << trial << " under " << config_path << "\n";
    return 1;
  }
  std::cout << "trace verified against deterministic re-run (trial " << trial << ")\n";
  std::cout << "residual bound audit: " << audit.violations << " violations, min relative slack "
            << format_double(audit.min_slack) << "\n";
  for (int k : audit.violating_iterations) std::cout << "  violation at iteration " << k << "\n";
  return audit.violations == 0 ? 0 : 1;
}

int cmd_bounds(const std::string& config_path) {
  using namespace srdo;
  ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  const std::uint64_t ts = trial_seed_of(cfg, 0);
  PartitionedProblem problem = generate_least_squares(cfg.n_dim, cfg.mbar, cfg.partitions,
                                                      cfg.workers, stream_key(ts, "problem"));
  const CodingScheme scheme = make_coding_scheme(cfg.workers, cfg.stragglers,
                                                 stream_key(ts, "codec"));
  std::vector<CodingScheme> schemes(static_cast<std::size_t>(cfg.partitions), scheme);
  const double ab = scheme_norm_product(schemes);
  const double lips = problem.lipschitz();
  const double scale = 1.0 / static_cast<double>(problem.partition_rows());
  std::cout << "L (max partition Lipschitz) = " << format_double(lips) << "\n";
  std::cout << "max ||A||_inf ||B||_{2,inf} = " << format_double(ab) << "\n";

  const StepsizeSchedule sched{cfg.step_a, cfg.step_theta};
  int kbar1 = -1;
  for (int k = cfg.delay_bound; k <= cfg.iterations; ++k) {
    const RateBase base = rate_base_scenario1(lips, ab, cfg.mu, cfg.gamma0,
                                              stepsize(sched, k) * scale);
    if (!base.vacuous) {
      kbar1 = k;
      std::cout << "scenario-1 rate base at kbar1=" << k << ": " << format_double(base.base)
                << " (non-vacuous)\n";
      break;
    }
  }
  if (kbar1 < 0)
    std::cout << "scenario-1 rate base: vacuous for all k <= run.iters at these parameters\n";

  const double gamma_max = (1.0 - cfg.gamma0) / cfg.partitions;
  bool found3 = false;
  for (int k = cfg.delay_bound; k <= cfg.iterations; ++k) {
    RhoEta3 re = rho_eta_general_rate(lips, ab, cfg.mu, cfg.gamma0, cfg.partitions, gamma_max,
                                    stepsize(sched, k) * scale, cfg.effective_servers(),
                                    problem.misaligned_partition_count(),
                                    problem.max_partition_minimizer_distance(),
                                    problem.max_subpartition_minimizer_distance(),
                                    cfg.delay_bound);
    if (!re.vacuous) {
      std::cout << "general rate overlay at kbar3=" << k << ": rho3=" << format_double(re.rho3)
                << " eta3=" << format_double(re.eta3) << "\n";
      found3 = true;
      break;
    }
  }
  if (!found3)
    std::cout << "general rate overlay: vacuous (eta3,2 <= 0 or rho3 >= 1) for all "
                 "k <= run.iters\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SRDO straggler-robust distributed optimization simulator"};
  app.set_version_flag("--version", srdo::kToolVersion);
  app.require_subcommand(1);

  std::string config_path, trace_path, out, dump_dir;
  int trials = -1, iters = -1, jobs = 0, n = 5, s = 2, seeds = 20, trial = 0;
  long long seed = -1;

  auto* run = app.add_subcommand("run", "run an experiment from a config file");
  run->add_option("config", config_path, "config file (flat dotted keys)")->required();
  run->add_option("--trials", trials, "override run.trials");
  run->add_option("--iters", iters, "override run.iters");
  run->add_option("--seed", seed, "override run.seed");
  run->add_option("--out", out, "override run.out");
  run->add_option("--jobs", jobs, "worker pool size (default: hardware)");

  auto* vc = app.add_subcommand("verify-codec", "build schemes and check A*B = ones");
  vc->add_option("--n", n, "workers per replica")->required();
  vc->add_option("--s", s, "straggler budget")->required();
  vc->add_option("--seeds", seeds, "number of seeds to test");
  vc->add_option("--dump", dump_dir, "write B/A matrices as CSV into this directory");

  auto* audit = app.add_subcommand("audit", "re-run a trial and audit the residual bound");
  audit->add_option("trace", trace_path, "per-trial CSV produced by run")->required();
  audit->add_option("--config", config_path, "config the trace was produced from")->required();
  audit->add_option("--trial", trial, "trial index of the trace (default 0)");

  auto* bounds = app.add_subcommand("bounds", "report rate-envelope constants for a config");
  bounds->add_option("config", config_path, "config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, trials, iters, seed, out, jobs);
    if (vc->parsed()) return cmd_verify_codec(n, s, seeds, dump_dir);
    if (audit->parsed()) return cmd_audit(trace_path, config_path, trial);
    if (bounds->parsed()) return cmd_bounds(config_path);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;  // validation failure
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;  // runtime error
  }
  return 0;
}
