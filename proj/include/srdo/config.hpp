#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "srdo/engine.hpp"
#include "srdo/rng.hpp"
#include "srdo/topology.hpp"

namespace srdo {

/// Flat dotted-key experiment configuration. Unknown keys are errors;
/// validation produces one consolidated report naming the violated
/// assumptions.
struct ExperimentConfig {
  // problem
  int n_dim = 100;        // problem.N
  int mbar = 100;         // problem.mbar
  int partitions = 5;     // problem.p
  int workers = 3;        // problem.n_r
  // coding
  int stragglers = 1;     // coding.s
  // network
  int servers = -1;       // network.servers (-1: defaults to problem.p)
  double mu = 0.05;       // network.mu
  std::string adjacency = "complete";  // "complete" or "edges:1-2,2-3,..."
  // random
  double pi = 0.3;          // random.pi
  int delay_bound = 0;      // random.H
  double gamma0 = 0.05;     // random.gamma0
  double edge_dropout = 0.0;  // random.edge_dropout
  std::string rng = "splitmix64-v1";  // random.rng (algorithm identifier)
  // stepsize
  double step_a = 300.0;   // stepsize.a
  double step_theta = 0.55;  // stepsize.theta
  // scenario
  std::string policy = "allowed_only";
  // run
  int iterations = 1000;   // run.iters
  int trials = 1;          // run.trials
  std::uint64_t seed = 1;  // run.seed
  double tol = 0.0;        // run.tol (0 disables the early stop)
  std::string out_dir = "out";  // run.out
  // baselines
  std::string baselines = "none";  // comma list of full_no_failures, same_failures

  std::vector<std::string> warnings;

  int effective_servers() const { return servers > 0 ? servers : partitions; }

  ScenarioPolicy scenario_policy() const {
    if (policy == "allowed_only") return ScenarioPolicy::AllowedOnly;
    if (policy == "ignore_stragglers") return ScenarioPolicy::IgnoreStragglers;
    if (policy == "stale_gradients") return ScenarioPolicy::StaleGradients;
    throw std::invalid_argument("unknown scenario.policy: " + policy);
  }

  std::vector<BaselineMode> baseline_modes() const {
    std::vector<BaselineMode> out;
    if (baselines == "none" || baselines.empty()) return out;
    std::stringstream ss(baselines);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "full_no_failures")
        out.push_back(BaselineMode::FullNoFailures);
      else if (item == "same_failures")
        out.push_back(BaselineMode::SameFailures);
      else
        throw std::invalid_argument("unknown baseline mode: " + item);
    }
    return out;
  }

  std::vector<double> gamma_vector() const {
    std::vector<double> g(static_cast<std::size_t>(partitions) + 1);
    g[0] = gamma0;
    for (int i = 1; i <= partitions; ++i)
      g[static_cast<std::size_t>(i)] = (1.0 - gamma0) / partitions;
    return g;
  }

  Adjacency server_adjacency() const {
    const int n = effective_servers();
    if (adjacency == "complete") return complete_adjacency(n);
    if (adjacency.rfind("edges:", 0) != 0)
      throw std::invalid_argument("network.adjacency must be 'complete' or 'edges:i-j,...'");
    Adjacency adj(static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n), false));
    for (int i = 0; i < n; ++i) adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = true;
    std::stringstream ss(adjacency.substr(6));
    std::string edge;
    while (std::getline(ss, edge, ',')) {
      const auto dash = edge.find('-');
      if (dash == std::string::npos) throw std::invalid_argument("bad edge spec: " + edge);
      const int a = std::stoi(edge.substr(0, dash)) - 1;
      const int b = std::stoi(edge.substr(dash + 1)) - 1;
      if (a < 0 || b < 0 || a >= n || b >= n)
        throw std::invalid_argument("edge endpoint out of range: " + edge);
      adj[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = true;
      adj[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = true;
    }
    return adj;
  }

  /// Throws with a consolidated report when any constraint fails; fills
  /// `warnings` for soft violations (theta <= 1/2).
  void validate() {
    std::vector<std::string> errors;
    auto req = [&](bool ok, const std::string& msg) {
      if (!ok) errors.push_back(msg);
    };
    req(n_dim > 0 && mbar > 0 && partitions > 0 && workers > 0,
        "problem dimensions must be positive");
    req(static_cast<long long>(partitions) * workers * mbar >= n_dim,
        "overdetermined system required: problem.p * problem.n_r * problem.mbar >= problem.N");
    req(stragglers >= 0 && stragglers < workers,
        "coding scheme requires 0 <= coding.s < problem.n_r (Section 2.1 budget)");
    req(mu > 0.0 && mu < 1.0, "Assumption 2 (Row Stochastic): network.mu must lie in (0,1)");
    req(pi >= 0.0 && pi < 1.0, "straggler probability random.pi must lie in [0,1)");
    req(delay_bound >= 0,
        "Assumption 3 (Bounded Delayed Evaluation): random.H must be nonnegative");
    req(gamma0 >= 0.0 && gamma0 < 1.0,
        "Assumption 4 (Choice of Partition): random.gamma0 must lie in [0,1)");
    req(edge_dropout >= 0.0 && edge_dropout < 1.0, "random.edge_dropout must lie in [0,1)");
    req(rng == "splitmix64-v1",
        "random.rng: only the 'splitmix64-v1' stream family is implemented");
    req(step_a > 0.0, "stepsize.a must be positive (a=0 makes alpha_0 infinite)");
    req(step_theta > 0.0 && step_theta <= 1.0,
        "Assumption 5 (Diminishing Stepsizes): stepsize.theta must lie in (0,1]");
    req(iterations >= 1, "run.iters must be at least 1");
    req(trials >= 1, "run.trials must be at least 1");
    req(tol >= 0.0, "run.tol must be nonnegative");
    req(effective_servers() >= 1, "network.servers must be at least 1");
    try {
      scenario_policy();
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
    try {
      baseline_modes();
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
    if (errors.empty()) {
      try {
        if (!adjacency_connected(server_adjacency()))
          errors.push_back("Assumption 2: server graph must be connected");
      } catch (const std::exception& e) {
        errors.push_back(e.what());
      }
    }
    if (!errors.empty()) {
      std::string all = "configuration invalid:";
      for (const auto& e : errors) all += "\n  - " + e;
      throw std::invalid_argument(all);
    }
    if (step_theta <= 0.5)
      warnings.push_back(
          "stepsize.theta <= 1/2: Assumption 5 needs sum alpha_k^2 < infinity (theta > 1/2); "
          "proceeding as configured");
  }

  RunParams run_params() const {
    RunParams p;
    p.n_servers = effective_servers();
    p.adjacency = server_adjacency();
    p.weights = build_weight_matrix(p.adjacency, mu);
    p.random.straggler_prob = pi;
    p.random.delay_bound = delay_bound;
    p.random.gamma = gamma_vector();
    p.schedule = {step_a, step_theta};
    p.policy = scenario_policy();
    p.iterations = iterations;
    p.early_stop_tol = tol;
    p.edge_dropout = edge_dropout;
    return p;
  }
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* begin = value.data();
  const char* end = value.data() + value.size();
  auto [p, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || p != end)
    throw std::invalid_argument("bad numeric value for " + key + ": '" + value + "'");
  return out;
}

}  // namespace detail

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_number;
  if (key == "problem.N") cfg.n_dim = parse_number<int>(key, value);
  else if (key == "problem.mbar") cfg.mbar = parse_number<int>(key, value);
  else if (key == "problem.p") cfg.partitions = parse_number<int>(key, value);
  else if (key == "problem.n_r") cfg.workers = parse_number<int>(key, value);
  else if (key == "coding.s") cfg.stragglers = parse_number<int>(key, value);
  else if (key == "network.servers") cfg.servers = parse_number<int>(key, value);
  else if (key == "network.mu") cfg.mu = parse_number<double>(key, value);
  else if (key == "network.adjacency") cfg.adjacency = value;
  else if (key == "random.pi") cfg.pi = parse_number<double>(key, value);
  else if (key == "random.H") cfg.delay_bound = parse_number<int>(key, value);
  else if (key == "random.gamma0") cfg.gamma0 = parse_number<double>(key, value);
  else if (key == "random.edge_dropout") cfg.edge_dropout = parse_number<double>(key, value);
  else if (key == "random.rng") cfg.rng = value;
  else if (key == "stepsize.a") cfg.step_a = parse_number<double>(key, value);
  else if (key == "stepsize.theta") cfg.step_theta = parse_number<double>(key, value);
  else if (key == "scenario.policy") cfg.policy = value;
  else if (key == "run.iters") cfg.iterations = parse_number<int>(key, value);
  else if (key == "run.trials") cfg.trials = parse_number<int>(key, value);
  else if (key == "run.seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "run.tol") cfg.tol = parse_number<double>(key, value);
  else if (key == "run.out") cfg.out_dir = value;
  else if (key == "baselines.modes") cfg.baselines = value;
  else throw std::invalid_argument("unknown configuration key: " + key);
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    std::string trimmed = line.substr(first, last - first + 1);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key=value");
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    apply_config_entry(cfg, strip(trimmed.substr(0, eq)), strip(trimmed.substr(eq + 1)));
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

/// Canonical key=value dump (sorted) used for the manifest's config hash.
inline std::string canonical_config_text(const ExperimentConfig& c) {
  std::map<std::string, std::string> kv;
  kv["problem.N"] = std::to_string(c.n_dim);
  kv["problem.mbar"] = std::to_string(c.mbar);
  kv["problem.p"] = std::to_string(c.partitions);
  kv["problem.n_r"] = std::to_string(c.workers);
  kv["coding.s"] = std::to_string(c.stragglers);
  kv["network.servers"] = std::to_string(c.effective_servers());
  kv["network.mu"] = format_double(c.mu);
  kv["network.adjacency"] = c.adjacency;
  kv["random.pi"] = format_double(c.pi);
  kv["random.H"] = std::to_string(c.delay_bound);
  kv["random.gamma0"] = format_double(c.gamma0);
  kv["random.edge_dropout"] = format_double(c.edge_dropout);
  kv["random.rng"] = c.rng;
  kv["stepsize.a"] = format_double(c.step_a);
  kv["stepsize.theta"] = format_double(c.step_theta);
  kv["scenario.policy"] = c.policy;
  kv["run.iters"] = std::to_string(c.iterations);
  kv["run.trials"] = std::to_string(c.trials);
  kv["run.seed"] = std::to_string(c.seed);
  kv["run.tol"] = format_double(c.tol);
  kv["baselines.modes"] = c.baselines;
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  return fnv1a(canonical_config_text(c));
}

}  // namespace srdo
