#pragma once

#include <queue>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "srdo/rng.hpp"

namespace srdo {

using Adjacency = std::vector<std::vector<bool>>;

inline Adjacency complete_adjacency(int n) {
  return Adjacency(static_cast<std::size_t>(n),
                   std::vector<bool>(static_cast<std::size_t>(n), true));
}

inline bool adjacency_connected(const Adjacency& adj) {
  const std::size_t n = adj.size();
  if (n == 0) return false;
  std::vector<bool> seen(n, false);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = true;
  std::size_t count = 1;
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop();
    for (std::size_t v = 0; v < n; ++v) {
      if (v != u && adj[u][v] && !seen[v]) {
        seen[v] = true;
        ++count;
        q.push(v);
      }
    }
  }
  return count == n;
}

/// Server consensus weights (Assumption-2 style): nonnegative, zero off the
/// adjacency, every row and column summing to 1 - mu.
struct WeightMatrix {
  Eigen::MatrixXd W;
  double mu = 0.0;
  double nu_min = 0.0;  // minimum positive entry
};

/// Complete graph: ((1-mu)/n) * ones. Otherwise a symmetric Metropolis base
/// (min(1/deg_i, 1/deg_j) on edges, diagonal absorbing the remainder) scaled
/// by (1-mu); symmetry gives equal row and column sums.
inline WeightMatrix build_weight_matrix(const Adjacency& adj, double mu) {
  const int n = static_cast<int>(adj.size());
  if (n <= 0) throw std::invalid_argument("empty adjacency");
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(adj[static_cast<std::size_t>(i)].size()) != n)
      throw std::invalid_argument("adjacency must be square");
    if (!adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)])
      throw std::invalid_argument("adjacency must include self-loops");
    for (int j = 0; j < n; ++j)
      if (adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] !=
          adj[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)])
        throw std::invalid_argument("adjacency must be symmetric");
  }
  if (!(mu > 0.0 && mu < 1.0)) throw std::invalid_argument("mu must lie in (0,1)");
  if (!adjacency_connected(adj)) throw std::invalid_argument("server graph must be connected");

  WeightMatrix out;
  out.mu = mu;
  bool complete = true;
  for (int i = 0; i < n && complete; ++i)
    for (int j = 0; j < n && complete; ++j)
      if (!adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) complete = false;

  if (complete) {
    out.W = Eigen::MatrixXd::Constant(n, n, (1.0 - mu) / n);
  } else {
    std::vector<int> deg(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])
          ++deg[static_cast<std::size_t>(i)];
    Eigen::MatrixXd base = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      double off = 0.0;
      for (int j = 0; j < n; ++j) {
        if (i == j || !adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
        base(i, j) = std::min(1.0 / deg[static_cast<std::size_t>(i)],
                              1.0 / deg[static_cast<std::size_t>(j)]);
        off += base(i, j);
      }
      base(i, i) = 1.0 - off;
    }
    out.W = (1.0 - mu) * base;
  }

  out.nu_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (out.W(i, j) > 0.0) out.nu_min = std::min(out.nu_min, out.W(i, j));
  return out;
}

/// Straggler / delay / partition-assignment sampling laws. Delays are uniform
/// on [0, min(H, k)]; stragglers are i.i.d. Bernoulli(pi) per worker per
/// iteration; the pull-step partition is categorical over (gamma_0, gamma_i).
struct RandomModel {
  double straggler_prob = 0.0;  // pi
  int delay_bound = 0;          // H
  std::vector<double> gamma;    // size p+1; gamma[0] = no connection

  void validate() const {
    if (!(straggler_prob >= 0.0 && straggler_prob < 1.0))
      throw std::invalid_argument("straggler probability must lie in [0,1)");
    if (delay_bound < 0) throw std::invalid_argument("delay bound H must be nonnegative");
    if (gamma.size() < 2) throw std::invalid_argument("gamma must cover gamma_0 and p partitions");
    double sum = 0.0;
    for (double g : gamma) {
      if (g < 0.0) throw std::invalid_argument("gamma entries must be nonnegative");
      sum += g;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("gamma must sum to 1");
  }
};

/// Categorical draw over {0, 1, ..., p}; 0 means no partition connected.
inline int sample_partition_assignment(EventStream& rng, const std::vector<double>& gamma) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    acc += gamma[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(gamma.size()) - 1;
}

inline std::vector<int> sample_stragglers(EventStream& rng, double pi, int n_workers) {
  std::vector<int> out;
  for (int w = 0; w < n_workers; ++w)
    if (rng.bernoulli(pi)) out.push_back(w);
  return out;
}

/// Staleness draw; never exceeds H nor the current iteration index.
inline int sample_delay(EventStream& rng, int delay_bound, int k) {
  const int hi = std::min(delay_bound, k);
  if (hi <= 0) return 0;
  return static_cast<int>(rng.uniform_int(0, hi));
}

/// Per-iteration edge dropout for the time-varying W(k) path. Each non-self
/// edge drops i.i.d.; a disconnected draw is retried (bounded), then the base
/// adjacency is kept for that iteration.
inline Adjacency sample_edge_dropout(const Adjacency& base, double drop_prob,
                                     std::uint64_t key) {
  if (drop_prob <= 0.0) return base;
  const std::size_t n = base.size();
  for (int attempt = 0; attempt < 16; ++attempt) {
    EventStream rng(stream_key(key, "topology.dropout", static_cast<std::uint64_t>(attempt)));
    Adjacency adj = base;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (adj[i][j] && rng.bernoulli(drop_prob)) adj[i][j] = adj[j][i] = false;
    if (adjacency_connected(adj)) return adj;
  }
  return base;
}

}  // namespace srdo
