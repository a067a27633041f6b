#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "srdo/engine.hpp"
#include "srdo/experiment.hpp"

using namespace srdo;

namespace {

RunParams basic_params(int n_servers, int p, double mu, double gamma0, double pi, int h,
                       StepsizeSchedule sched, ScenarioPolicy policy, int iters) {
  RunParams params;
  params.n_servers = n_servers;
  params.adjacency = complete_adjacency(n_servers);
  params.weights = build_weight_matrix(params.adjacency, mu);
  params.random.straggler_prob = pi;
  params.random.delay_bound = h;
  params.random.gamma.assign(static_cast<std::size_t>(p) + 1, (1.0 - gamma0) / p);
  params.random.gamma[0] = gamma0;
  params.schedule = sched;
  params.policy = policy;
  params.iterations = iters;
  return params;
}

EngineState init_state(const RunParams& params, const PartitionedProblem& problem,
                       std::uint64_t trial_seed) {
  EngineState state;
  state.k = 0;
  BulkSampler init_rng(stream_key(trial_seed, "engine.init"));
  state.v.resize(static_cast<std::size_t>(params.n_servers));
  for (int i = 0; i < params.n_servers; ++i) {
    Eigen::VectorXd v0(problem.dim());
    for (Eigen::Index j = 0; j < problem.dim(); ++j) v0(j) = init_rng.normal();
    state.v[static_cast<std::size_t>(i)] = std::move(v0);
  }
  state.x = state.v;
  state.history.push_back(state.v);
  state.stale_cache.resize(static_cast<std::size_t>(params.n_servers));
  return state;
}

}  // namespace

TEST_CASE("stepsize schedule") {
  const StepsizeSchedule s{300.0, 0.55};
  CHECK(stepsize(s, 0) == Catch::Approx(std::pow(300.0, -0.55)).epsilon(1e-12));
  CHECK(stepsize(s, 0) == Catch::Approx(0.0434).epsilon(2e-2));
  const StepsizeSchedule s2{300.0, 0.95};
  CHECK(stepsize(s2, 300) == Catch::Approx(std::pow(600.0, -0.95)).epsilon(1e-12));
  for (int k = 0; k < 1000; ++k) REQUIRE(stepsize(s, k + 1) < stepsize(s, k));
}

TEST_CASE("single server reduces to plain gradient descent") {
  const auto problem = generate_least_squares(6, 8, 1, 1, 77);
  const RunParams params = basic_params(1, 1, 0.25, 0.0, 0.0, 0, {10.0, 0.75},
                                        ScenarioPolicy::AllowedOnly, 100);
  std::vector<CodingScheme> schemes{make_coding_scheme(1, 0, 1)};
  const TrialTrace trace = run_trial(params, problem, schemes, 31);

  // Independent reference loop with the same init and applied stepsize.
  BulkSampler init_rng(stream_key(31, "engine.init"));
  Eigen::VectorXd x(6);
  for (int j = 0; j < 6; ++j) x(j) = init_rng.normal();
  const double scale = 1.0 / static_cast<double>(problem.partition_rows());
  const Eigen::VectorXd xo = problem.ground_truth();
  for (int k = 0; k < 100; ++k) {
    x = x - stepsize(params.schedule, k) * scale * problem.full_gradient(x);
    const double ref_ae = (x - xo).norm() / xo.norm();
    REQUIRE(trace.records[static_cast<std::size_t>(k) + 1].ae ==
            Catch::Approx(ref_ae).margin(1e-12));
  }
}

TEST_CASE("full disconnection leaves only consensus contraction") {
  const auto problem = generate_least_squares(4, 2, 2, 2, 5);
  RunParams params = basic_params(3, 2, 0.2, 0.0, 0.0, 0, {10.0, 0.75},
                                  ScenarioPolicy::AllowedOnly, 5);
  params.random.gamma = {1.0, 0.0, 0.0};  // always disconnected
  std::vector<CodingScheme> schemes(2, make_coding_scheme(2, 1, 3));

  EngineState state = init_state(params, problem, 9);
  const double ascale = 1.0 / static_cast<double>(problem.partition_rows());
  for (int k = 0; k < 5; ++k) {
    const std::vector<Eigen::VectorXd> v_before = state.v;
    const auto ests = step(state, problem, schemes, params, 9, ascale);
    for (int i = 0; i < 3; ++i) {
      CHECK(ests[static_cast<std::size_t>(i)].partition == 0);
      // x_i(k+1) = v_i(k) exactly
      CHECK((state.x[static_cast<std::size_t>(i)] - v_before[static_cast<std::size_t>(i)])
                .norm() == 0.0);
    }
  }
}

TEST_CASE("degenerate case logs exactly zero residuals") {
  const auto problem = generate_least_squares(8, 4, 3, 3, 21);
  const RunParams params = basic_params(3, 3, 0.05, 0.05, 0.0, 0, {50.0, 0.6},
                                        ScenarioPolicy::AllowedOnly, 40);
  std::vector<CodingScheme> schemes(3, make_coding_scheme(3, 1, 8));
  const TrialTrace trace = run_trial(params, problem, schemes, 13);
  for (const auto& rec : trace.records) REQUIRE(rec.max_r_norm == 0.0);
}

TEST_CASE("logged residual matches the rearranged update identity") {
  const auto problem = generate_least_squares(6, 3, 2, 3, 22);
  const RunParams params = basic_params(3, 2, 0.1, 0.1, 0.4, 3, {20.0, 0.6},
                                        ScenarioPolicy::StaleGradients, 30);
  std::vector<CodingScheme> schemes(2, make_coding_scheme(3, 1, 9));
  EngineState state = init_state(params, problem, 55);
  const double ascale = 1.0 / static_cast<double>(problem.partition_rows());
  for (int k = 0; k < 30; ++k) {
    const std::vector<Eigen::VectorXd> v_before = state.v;
    const double alpha_eff = stepsize(params.schedule, k) * ascale;
    const auto ests = step(state, problem, schemes, params, 55, ascale);
    for (int i = 0; i < 3; ++i) {
      const auto& e = ests[static_cast<std::size_t>(i)];
      if (e.partition == 0) continue;
      const Eigen::VectorXd lhs = state.x[static_cast<std::size_t>(i)] -
                                  v_before[static_cast<std::size_t>(i)] +
                                  alpha_eff * problem.partition_gradient(e.partition - 1,
                                                                         v_before[static_cast<std::size_t>(i)]);
      REQUIRE((lhs - e.residual).norm() <= 1e-10 * std::max(1.0, e.residual.norm()));
    }
  }
}

TEST_CASE("delay discipline and history depth") {
  const auto problem = generate_least_squares(5, 2, 2, 3, 23);
  const int h = 4;
  const RunParams params = basic_params(2, 2, 0.1, 0.05, 0.5, h, {20.0, 0.6},
                                        ScenarioPolicy::StaleGradients, 25);
  std::vector<CodingScheme> schemes(2, make_coding_scheme(3, 1, 10));
  EngineState state = init_state(params, problem, 66);
  const double ascale = 1.0 / static_cast<double>(problem.partition_rows());
  for (int k = 0; k < 25; ++k) {
    const auto ests = step(state, problem, schemes, params, 66, ascale);
    for (const auto& e : ests)
      for (const auto& c : e.contributors) {
        REQUIRE(c.k_eval >= 0);
        REQUIRE(k - c.k_eval <= h);  // provenance age within the bound
        REQUIRE(c.k_eval <= k);
      }
    REQUIRE(static_cast<int>(state.history.size()) == std::min(state.k, h) + 1);
  }
}

TEST_CASE("consensus is the stochastic-completed weight product") {
  const auto problem = generate_least_squares(4, 2, 2, 2, 24);
  const RunParams params = basic_params(3, 2, 0.15, 0.0, 0.0, 0, {10.0, 0.7},
                                        ScenarioPolicy::AllowedOnly, 3);
  std::vector<CodingScheme> schemes(2, make_coding_scheme(2, 1, 4));
  EngineState state = init_state(params, problem, 77);
  const double ascale = 1.0 / static_cast<double>(problem.partition_rows());
  Eigen::MatrixXd consensus = params.weights.W;
  consensus.diagonal().array() += params.weights.mu;
  for (int k = 0; k < 3; ++k) {
    (void)step(state, problem, schemes, params, 77, ascale);
    for (int i = 0; i < 3; ++i) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(4);
      for (int j = 0; j < 3; ++j) acc += consensus(i, j) * state.x[static_cast<std::size_t>(j)];
      REQUIRE((state.v[static_cast<std::size_t>(i)] - acc).norm() == 0.0);
    }
  }
}

TEST_CASE("scenario dispatch and the stale cache") {
  const auto problem = generate_least_squares(5, 2, 1, 3, 25);
  const CodingScheme scheme = make_coding_scheme(3, 1, 12);
  RunParams params = basic_params(2, 1, 0.1, 0.0, 0.0, 4, {10.0, 0.7},
                                  ScenarioPolicy::StaleGradients, 1);

  EngineState state = init_state(params, problem, 88);
  state.k = 6;  // pretend mid-run; history holds one snapshot (delays drawn as 0 here)
  const Eigen::VectorXd v0 = state.v[0];

  SECTION("within-budget straggling takes the scenario-1 path") {
    std::vector<detail::WorkerMessage> msgs{{0, 0, 0}, {2, 0, 0}};
    const GradientEstimate est = compute_partition_gradient(
        state, 0, 0, {0, 2}, msgs, scheme, problem, ScenarioPolicy::StaleGradients, 4, 0.01);
    CHECK(est.scenario == Scenario::AllowedNumber);
    const Eigen::VectorXd exact = problem.partition_gradient(0, v0);
    CHECK((est.estimate - exact).norm() <= 1e-9 * exact.norm());
  }

  SECTION("over-budget straggling with an empty cache drops the missing terms") {
    std::vector<detail::WorkerMessage> msgs{{0, 0, 0}};
    const GradientEstimate est = compute_partition_gradient(
        state, 0, 0, {0}, msgs, scheme, problem, ScenarioPolicy::IgnoreStragglers, 4, 0.01);
    CHECK(est.scenario == Scenario::IgnoreStragglers);
    // fit row 0 has support {0,1}; only worker 0 contributes
    const Eigen::VectorXd manual =
        scheme.A(est.fit_index, 0) * problem.coded_worker_gradient(scheme, 0, 0, 0, v0);
    CHECK((est.estimate - manual).norm() <= 1e-12 * std::max(1.0, manual.norm()));
  }

  SECTION("scenario 3 fills missing fit workers from the cache") {
    Eigen::VectorXd cached = Eigen::VectorXd::Constant(5, 3.25);
    state.stale_cache[0][{0, 0, 1}] = {cached, state.k - 2};  // age 2 <= H
    std::vector<detail::WorkerMessage> msgs{{0, 0, 0}};
    const GradientEstimate est = compute_partition_gradient(
        state, 0, 0, {0}, msgs, scheme, problem, ScenarioPolicy::StaleGradients, 4, 0.01);
    CHECK(est.scenario == Scenario::StaleGradients);
    bool used_stale = false;
    for (const auto& c : est.contributors)
      if (c.worker == 1 && c.stale) {
        used_stale = true;
        CHECK(c.k_eval == state.k - 2);
      }
    CHECK(used_stale);
    const Eigen::VectorXd manual =
        scheme.A(est.fit_index, 0) * problem.coded_worker_gradient(scheme, 0, 0, 0, v0) +
        scheme.A(est.fit_index, 1) * cached;
    CHECK((est.estimate - manual).norm() <= 1e-12 * std::max(1.0, manual.norm()));
  }

  SECTION("expired cache entries are evicted before use") {
    state.stale_cache[0][{0, 0, 1}] = {Eigen::VectorXd::Constant(5, 3.25), state.k - 5};  // age 5 > H
    std::vector<detail::WorkerMessage> msgs{{0, 0, 0}};
    const GradientEstimate est = compute_partition_gradient(
        state, 0, 0, {0}, msgs, scheme, problem, ScenarioPolicy::StaleGradients, 4, 0.01);
    for (const auto& c : est.contributors) CHECK_FALSE(c.stale);
    CHECK(state.stale_cache[0].count({0, 0, 1}) == 0);
  }

  SECTION("fresh gradients are written into the cache after use") {
    std::vector<detail::WorkerMessage> msgs{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    (void)compute_partition_gradient(state, 0, 0, {0, 1, 2}, msgs, scheme, problem,
                                     ScenarioPolicy::StaleGradients, 4, 0.01);
    // fit row 0 support {0,1}: both fresh entries cached at k_eval = k
    CHECK(state.stale_cache[0].count({0, 0, 0}) == 1);
    CHECK(state.stale_cache[0].at({0, 0, 0}).k_eval == state.k);
  }
}

TEST_CASE("trials are deterministic in the seed") {
  const auto problem = generate_least_squares(6, 3, 2, 3, 26);
  const RunParams params = basic_params(3, 2, 0.05, 0.05, 0.4, 5, {30.0, 0.6},
                                        ScenarioPolicy::StaleGradients, 40);
  std::vector<CodingScheme> schemes(2, make_coding_scheme(3, 1, 14));
  const TrialTrace a = run_trial(params, problem, schemes, 1234);
  const TrialTrace b = run_trial(params, problem, schemes, 1234);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    REQUIRE(a.records[i].ae == b.records[i].ae);
    REQUIRE(a.records[i].ce == b.records[i].ce);
    REQUIRE(a.records[i].sumsq_v_err == b.records[i].sumsq_v_err);
    REQUIRE(a.records[i].max_r_norm == b.records[i].max_r_norm);
    REQUIRE(a.records[i].scenario_counts == b.records[i].scenario_counts);
  }
}

TEST_CASE("baselines reduce to uncoded networks") {
  const auto problem = generate_least_squares(6, 3, 2, 3, 27);
  const RunParams params = basic_params(2, 2, 0.05, 0.05, 0.4, 5, {30.0, 0.6},
                                        ScenarioPolicy::StaleGradients, 60);
  SECTION("full connection, no failures") {
    const TrialTrace t = run_centralized_baseline(params, problem, BaselineMode::FullNoFailures, 7);
    for (const auto& rec : t.records) {
      REQUIRE(rec.max_r_norm == 0.0);  // no stragglers, no delays
      for (int c : rec.straggler_counts) REQUIRE(c <= 0);
    }
    CHECK(t.records.back().ae < t.records.front().ae);
  }
  SECTION("same straggler draws, uncoded") {
    const TrialTrace t = run_centralized_baseline(params, problem, BaselineMode::SameFailures, 7);
    // identical keyed substreams: straggler counts match the SRDO run's draws
    std::vector<CodingScheme> schemes(2, make_coding_scheme(3, 1, 14));
    const TrialTrace srdo_t = run_trial(params, problem, schemes, 7);
    for (std::size_t k = 1; k < t.records.size(); ++k)
      for (std::size_t i = 0; i < 2; ++i)
        if (t.records[k].partition_drawn[i] != 0 &&
            t.records[k].partition_drawn[i] == srdo_t.records[k].partition_drawn[i])
          REQUIRE(t.records[k].straggler_counts[i] == srdo_t.records[k].straggler_counts[i]);
  }
}

TEST_CASE("early stop terminates short of the budget") {
  // Well-conditioned tall block so plain descent reaches the tolerance fast.
  const auto problem = generate_least_squares(2, 16, 1, 1, 3);
  RunParams params = basic_params(1, 1, 0.25, 0.0, 0.0, 0, {5.0, 0.6},
                                  ScenarioPolicy::AllowedOnly, 100000);
  params.early_stop_tol = 1e-8;
  std::vector<CodingScheme> schemes{make_coding_scheme(1, 0, 1)};
  const TrialTrace t = run_trial(params, problem, schemes, 5);
  CHECK(t.records.size() < 100001);
}
