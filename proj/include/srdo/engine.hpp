#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "srdo/analysis.hpp"
#include "srdo/codec.hpp"
#include "srdo/problem.hpp"
#include "srdo/topology.hpp"
#include "srdo/trace.hpp"

namespace srdo {

/// alpha_k = (k + a)^(-theta); strictly decreasing for a > 0, theta > 0.
struct StepsizeSchedule {
  double a = 1.0;
  double theta = 1.0;
};

inline double stepsize(const StepsizeSchedule& s, int k) {
  return std::pow(static_cast<double>(k) + s.a, -s.theta);
}

enum class ScenarioPolicy { AllowedOnly, IgnoreStragglers, StaleGradients };

enum class BaselineMode { FullNoFailures, SameFailures };

struct RunParams {
  int n_servers = 1;
  WeightMatrix weights;
  RandomModel random;
  StepsizeSchedule schedule;
  ScenarioPolicy policy = ScenarioPolicy::AllowedOnly;
  int iterations = 1;
  double early_stop_tol = 0.0;  // 0 disables the while-loop stop
  double edge_dropout = 0.0;
  Adjacency adjacency;  // base server graph (with self-loops)
};

struct CacheEntry {
  Eigen::VectorXd gradient;
  int k_eval = 0;
};

struct Contributor {
  int worker = 0;
  int source_server = 0;  // server whose weighted average was evaluated
  int k_eval = 0;
  bool stale = false;
};

/// Decoded partition-gradient estimate with provenance, plus the sum-form
/// residual of the step it was used in (the decode minus the same decode with
/// every worker evaluated at the server's current weighted average).
struct GradientEstimate {
  int partition = 0;  // 1-based; 0 = none
  Eigen::VectorXd estimate;
  int fit_index = 0;
  std::vector<Contributor> contributors;
  Scenario scenario = Scenario::None;
  Eigen::VectorXd residual;  // R_i(k)
  int straggler_count = 0;
};

struct EngineState {
  int k = 0;
  std::vector<Eigen::VectorXd> v;  // weighted averages, one per server
  std::vector<Eigen::VectorXd> x;  // estimates
  std::deque<std::vector<Eigen::VectorXd>> history;  // v over last H+1 iterations
  // per server: (partition, replica, worker) -> newest cached coded gradient
  std::vector<std::map<std::tuple<int, int, int>, CacheEntry>> stale_cache;
};

namespace detail {

struct WorkerMessage {
  int worker = 0;
  int source_server = 0;
  int delay = 0;
};

inline void evict_expired(std::map<std::tuple<int, int, int>, CacheEntry>& cache, int k, int h) {
  for (auto it = cache.begin(); it != cache.end();) {
    if (k - it->second.k_eval > h)
      it = cache.erase(it);
    else
      ++it;
  }
}

}  // namespace detail

/// Scenario-dispatching decode for one server pull. Scenario 1 applies
/// whenever the straggler count is within budget; otherwise the policy picks
/// between ignoring stragglers and filling from the stale cache. Fresh coded
/// gradients are written into the cache after use.
inline GradientEstimate compute_partition_gradient(
    EngineState& state, int server, int iota, const std::vector<int>& connected,
    const std::vector<detail::WorkerMessage>& messages, const CodingScheme& scheme,
    const PartitionedProblem& problem, ScenarioPolicy policy, int delay_bound,
    double applied_alpha) {
  const int replica = 0;
  const Eigen::Index dim = problem.dim();
  GradientEstimate est;
  est.partition = iota + 1;
  est.straggler_count = scheme.n_workers - static_cast<int>(connected.size());

  const bool within_budget = est.straggler_count <= scheme.s;
  if (within_budget)
    est.scenario = Scenario::AllowedNumber;
  else
    est.scenario = policy == ScenarioPolicy::StaleGradients ? Scenario::StaleGradients
                                                            : Scenario::IgnoreStragglers;

  const FitSelection fit = select_fit_row(scheme.row_supports, connected);
  est.fit_index = fit.fit_index;

  auto& cache = state.stale_cache[static_cast<std::size_t>(server)];
  detail::evict_expired(cache, state.k, delay_bound);

  // Subpartition gradients repeat across workers (cyclic supports overlap)
  // and between the decode and the residual; memoize per evaluation point.
  std::map<std::pair<int, std::pair<int, int>>, Eigen::VectorXd> sub_memo;
  auto subgrad_at = [&](int lambda, int q, int k_eval,
                        const Eigen::VectorXd& point) -> const Eigen::VectorXd& {
    auto [it, fresh] = sub_memo.try_emplace({lambda, {q, k_eval}});
    if (fresh) it->second = problem.subpartition_gradient(iota, replica, lambda, point);
    return it->second;
  };
  auto coded_at = [&](int w, int q, int k_eval, const Eigen::VectorXd& point) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
    for (int lambda = 0; lambda < scheme.n_workers; ++lambda) {
      const double c = scheme.B(w, lambda);
      if (c != 0.0) out += c * subgrad_at(lambda, q, k_eval, point);
    }
    return out;
  };

  // Fresh coded gradients, evaluated at v_q(k - dk) from the history window.
  std::map<int, Eigen::VectorXd> used;
  for (const auto& msg : messages) {
    if (std::find(fit.usable_workers.begin(), fit.usable_workers.end(), msg.worker) ==
        fit.usable_workers.end())
      continue;
    const auto& snapshot = state.history[state.history.size() - 1 - static_cast<std::size_t>(msg.delay)];
    const Eigen::VectorXd& point = snapshot[static_cast<std::size_t>(msg.source_server)];
    Eigen::VectorXd g = coded_at(msg.worker, msg.source_server, state.k - msg.delay, point);
    est.contributors.push_back({msg.worker, msg.source_server, state.k - msg.delay, false});
    auto key = std::make_tuple(iota, replica, msg.worker);
    auto it = cache.find(key);
    if (it == cache.end() || it->second.k_eval <= state.k - msg.delay)
      cache[key] = {g, state.k - msg.delay};
    used[msg.worker] = std::move(g);
  }

  // Scenario 3: fill fit-support workers missing this iteration from cache.
  if (est.scenario == Scenario::StaleGradients) {
    for (int w : fit.fit_support) {
      if (used.count(w)) continue;
      auto it = cache.find(std::make_tuple(iota, replica, w));
      if (it != cache.end() && state.k - it->second.k_eval <= delay_bound) {
        used[w] = it->second.gradient;
        est.contributors.push_back({w, -1, it->second.k_eval, true});
      }
    }
  }

  est.estimate = Eigen::VectorXd::Zero(dim);
  est.residual = Eigen::VectorXd::Zero(dim);
  // The local evaluation v_i(k) is keyed as (server, k), so delay-0 messages
  // share it and the degenerate residual cancels exactly.
  const Eigen::VectorXd& v_i = state.v[static_cast<std::size_t>(server)];
  for (int w : fit.fit_support) {
    const double a_w = scheme.A(fit.fit_index, w);
    const Eigen::VectorXd g_here = coded_at(w, server, state.k, v_i);
    auto it = used.find(w);
    if (it != used.end()) {
      est.estimate += a_w * it->second;
      est.residual += a_w * (it->second - g_here);
    } else {
      est.residual += a_w * (-g_here);  // missing worker: delayed term is zero
    }
  }
  est.residual *= -applied_alpha;
  return est;
}

namespace detail {

inline std::vector<int> draw_connected(std::uint64_t trial_seed, int k, int server,
                                       double pi, int n_workers, int budget,
                                       ScenarioPolicy policy, int* straggler_count) {
  std::vector<int> stragglers;
  if (pi > 0.0) {
    const int max_attempts = 64;
    for (int attempt = 0;; ++attempt) {
      EventStream rng(stream_key(trial_seed, "engine.straggler", static_cast<std::uint64_t>(k),
                                 static_cast<std::uint64_t>(server),
                                 static_cast<std::uint64_t>(attempt)));
      stragglers = sample_stragglers(rng, pi, n_workers);
      if (policy != ScenarioPolicy::AllowedOnly ||
          static_cast<int>(stragglers.size()) <= budget)
        break;
      if (attempt + 1 >= max_attempts) {  // clamp: keep the first `budget` stragglers
        stragglers.resize(static_cast<std::size_t>(budget));
        break;
      }
    }
  }
  *straggler_count = static_cast<int>(stragglers.size());
  std::vector<int> connected;
  for (int w = 0; w < n_workers; ++w)
    if (std::find(stragglers.begin(), stragglers.end(), w) == stragglers.end())
      connected.push_back(w);
  return connected;
}

}  // namespace detail

/// One SRDO iteration: push (history), per-server pull with scenario-dependent
/// decode, gradient update, consensus. Returns per-server estimates for
/// logging. The consensus operator is W + mu*I (see README on weights).
inline std::vector<GradientEstimate> step(EngineState& state, const PartitionedProblem& problem,
                                          const std::vector<CodingScheme>& schemes,
                                          const RunParams& params, std::uint64_t trial_seed,
                                          double applied_scale) {
  const int n = params.n_servers;
  const int k = state.k;
  const int h = params.random.delay_bound;
  const double alpha_eff = stepsize(params.schedule, k) * applied_scale;

  std::vector<GradientEstimate> results(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    EventStream part_rng(stream_key(trial_seed, "engine.partition", static_cast<std::uint64_t>(k),
                                    static_cast<std::uint64_t>(i)));
    const int assignment = sample_partition_assignment(part_rng, params.random.gamma);
    if (assignment == 0) {
      // Unanimous full straggling: x_i(k+1) = v_i(k).
      state.x[static_cast<std::size_t>(i)] = state.v[static_cast<std::size_t>(i)];
      results[static_cast<std::size_t>(i)].partition = 0;
      results[static_cast<std::size_t>(i)].scenario = Scenario::None;
      results[static_cast<std::size_t>(i)].estimate = Eigen::VectorXd::Zero(problem.dim());
      results[static_cast<std::size_t>(i)].residual = Eigen::VectorXd::Zero(problem.dim());
      continue;
    }
    const int iota = assignment - 1;
    const CodingScheme& scheme = schemes[static_cast<std::size_t>(iota)];

    int straggler_count = 0;
    const std::vector<int> connected =
        detail::draw_connected(trial_seed, k, i, params.random.straggler_prob,
                               scheme.n_workers, scheme.s, params.policy, &straggler_count);

    std::vector<detail::WorkerMessage> messages;
    for (int w : connected) {
      EventStream delay_rng(stream_key(trial_seed, "engine.delay", static_cast<std::uint64_t>(k),
                                       static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(w)));
      const int dk = sample_delay(delay_rng, h, k);
      int q = i;  // delay-0 messages carry the pulling server's fresh push
      if (dk > 0) {
        EventStream src_rng(stream_key(trial_seed, "engine.source", static_cast<std::uint64_t>(k),
                                       static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(w)));
        q = static_cast<int>(src_rng.uniform_below(static_cast<std::uint64_t>(n)));
      }
      messages.push_back({w, q, dk});
    }

    GradientEstimate est = compute_partition_gradient(state, i, iota, connected, messages,
                                                      scheme, problem, params.policy, h, alpha_eff);
    est.straggler_count = straggler_count;
    state.x[static_cast<std::size_t>(i)] =
        state.v[static_cast<std::size_t>(i)] - alpha_eff * est.estimate;
    results[static_cast<std::size_t>(i)] = std::move(est);
  }

  // Consensus step, with the diagonal completed to row sums 1.
  Eigen::MatrixXd consensus;
  if (params.edge_dropout > 0.0) {
    const Adjacency adj = sample_edge_dropout(
        params.adjacency, params.edge_dropout,
        stream_key(trial_seed, "engine.graph", static_cast<std::uint64_t>(k)));
    consensus = build_weight_matrix(adj, params.weights.mu).W;
  } else {
    consensus = params.weights.W;
  }
  consensus.diagonal().array() += params.weights.mu;

  std::vector<Eigen::VectorXd> v_next(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(problem.dim());
    for (int j = 0; j < n; ++j) acc += consensus(i, j) * state.x[static_cast<std::size_t>(j)];
    v_next[static_cast<std::size_t>(i)] = std::move(acc);
  }
  state.v = std::move(v_next);
  state.history.push_back(state.v);
  while (static_cast<int>(state.history.size()) > h + 1) state.history.pop_front();
  state.k += 1;
  return results;
}

/// Runs K iterations (optionally early-stopped) and records the trace.
inline TrialTrace run_trial(const RunParams& params, const PartitionedProblem& problem,
                            const std::vector<CodingScheme>& schemes, std::uint64_t trial_seed) {
  params.random.validate();
  if (static_cast<int>(params.random.gamma.size()) != problem.partitions() + 1)
    throw std::invalid_argument("gamma length must be p + 1");
  if (static_cast<int>(schemes.size()) != problem.partitions())
    throw std::invalid_argument("one coding scheme per partition required");

  const int n = params.n_servers;
  const Eigen::Index dim = problem.dim();
  const double applied_scale = 1.0 / static_cast<double>(problem.partition_rows());
  const Eigen::VectorXd x_star = problem.ground_truth();
  const double max_submin = problem.max_subpartition_minimizer_distance();

  EngineState state;
  state.k = 0;
  BulkSampler init_rng(stream_key(trial_seed, "engine.init"));
  state.v.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v0(dim);
    for (Eigen::Index j = 0; j < dim; ++j) v0(j) = init_rng.normal();
    state.v[static_cast<std::size_t>(i)] = std::move(v0);
  }
  state.x = state.v;
  state.history.push_back(state.v);
  state.stale_cache.resize(static_cast<std::size_t>(n));

  TrialTrace trace;
  trace.n_servers = n;
  trace.delay_bound = params.random.delay_bound;
  trace.applied_scale = applied_scale;
  trace.records.reserve(static_cast<std::size_t>(params.iterations) + 1);

  std::deque<double> vmax_window;
  auto vmax = [&](const std::vector<Eigen::VectorXd>& vs) {
    double m = 0.0;
    for (const auto& v : vs) m = std::max(m, (v - x_star).norm());
    return m;
  };
  auto sumsq = [&](const std::vector<Eigen::VectorXd>& vs) {
    double s = 0.0;
    for (const auto& v : vs) s += (v - x_star).squaredNorm();
    return s;
  };

  IterationRecord init;
  init.k = 0;
  init.alpha = stepsize(params.schedule, 0);
  init.ae = absolute_error(state.x, x_star);
  init.ce = consensus_error(state.x, x_star);
  init.sumsq_v_err = sumsq(state.v);
  init.vmax_err = vmax(state.v);
  init.r_norms.assign(static_cast<std::size_t>(n), 0.0);
  init.partition_drawn.assign(static_cast<std::size_t>(n), 0);
  init.straggler_counts.assign(static_cast<std::size_t>(n), -1);
  init.scenario_counts = {n, 0, 0, 0};
  init.condition1 = max_submin <= init.vmax_err;
  init.division = 1;
  vmax_window.push_back(init.vmax_err);
  trace.records.push_back(std::move(init));

  for (int k = 0; k < params.iterations; ++k) {
    const std::vector<Eigen::VectorXd> v_prev = state.v;
    const std::vector<GradientEstimate> ests = step(state, problem, schemes, params, trial_seed,
                                                    applied_scale);
    IterationRecord rec;
    rec.k = k + 1;
    rec.alpha = stepsize(params.schedule, k + 1);
    rec.ae = absolute_error(state.x, x_star);
    rec.ce = consensus_error(state.x, x_star);
    rec.sumsq_v_err = sumsq(state.v);
    rec.vmax_err = vmax(state.v);
    rec.r_norms.resize(static_cast<std::size_t>(n));
    rec.partition_drawn.resize(static_cast<std::size_t>(n));
    rec.straggler_counts.resize(static_cast<std::size_t>(n));
    bool any_scenario2 = false;
    for (int i = 0; i < n; ++i) {
      const auto& e = ests[static_cast<std::size_t>(i)];
      rec.r_norms[static_cast<std::size_t>(i)] = e.residual.norm();
      rec.max_r_norm = std::max(rec.max_r_norm, rec.r_norms[static_cast<std::size_t>(i)]);
      rec.partition_drawn[static_cast<std::size_t>(i)] = e.partition;
      rec.straggler_counts[static_cast<std::size_t>(i)] =
          e.partition == 0 ? -1 : e.straggler_count;
      rec.scenario_counts[static_cast<std::size_t>(e.scenario)] += 1;
      if (e.scenario == Scenario::IgnoreStragglers) any_scenario2 = true;
    }
    // Condition 1 compares the subpartition-minimizer spread against the
    // delayed window of v errors (window of the step just taken).
    double wmax = 0.0;
    for (double w : vmax_window) wmax = std::max(wmax, w);
    rec.condition1 = max_submin <= wmax;
    rec.division = (any_scenario2 && !rec.condition1) ? 2 : 1;

    vmax_window.push_back(rec.vmax_err);
    while (static_cast<int>(vmax_window.size()) > params.random.delay_bound + 1)
      vmax_window.pop_front();
    trace.records.push_back(std::move(rec));

    if (params.early_stop_tol > 0.0) {
      double eps = 0.0;
      for (int i = 0; i < n; ++i)
        eps = std::max(eps, (state.v[static_cast<std::size_t>(i)] -
                             v_prev[static_cast<std::size_t>(i)])
                                .norm());
      if (eps <= params.early_stop_tol) break;
    }
  }
  return trace;
}

/// Centralized baselines are the same network with s = 0 identity coding:
/// FullNoFailures additionally removes stragglers and delays; SameFailures
/// keeps the same straggler draws (identical keyed substreams) uncoded.
inline TrialTrace run_centralized_baseline(const RunParams& params,
                                           const PartitionedProblem& problem,
                                           BaselineMode mode, std::uint64_t trial_seed) {
  RunParams p = params;
  p.random.delay_bound = 0;
  if (mode == BaselineMode::FullNoFailures) {
    p.random.straggler_prob = 0.0;
    p.policy = ScenarioPolicy::AllowedOnly;
  } else {
    p.policy = ScenarioPolicy::IgnoreStragglers;
  }
  CodingScheme identity;
  identity.n_workers = problem.workers_per_replica();
  identity.s = 0;
  identity.B = Eigen::MatrixXd::Identity(identity.n_workers, identity.n_workers);
  identity.A = build_decoder(identity.B, 0, &identity.row_supports);
  std::vector<CodingScheme> schemes(static_cast<std::size_t>(problem.partitions()), identity);
  return run_trial(p, problem, schemes, trial_seed);
}

}  // namespace srdo
