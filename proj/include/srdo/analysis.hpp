#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "srdo/codec.hpp"
#include "srdo/problem.hpp"
#include "srdo/trace.hpp"

namespace srdo {

/// AE := max_i ||x_i - x_o|| / ||x_o||.
inline double absolute_error(const std::vector<Eigen::VectorXd>& xs,
                             const Eigen::VectorXd& x_o) {
  if (x_o.norm() == 0.0) throw std::invalid_argument("zero ground truth");
  double m = 0.0;
  for (const auto& x : xs) m = std::max(m, (x - x_o).norm());
  return m / x_o.norm();
}

/// CE := max_i ||x_i - mean(x)|| / ||x_o||.
inline double consensus_error(const std::vector<Eigen::VectorXd>& xs,
                              const Eigen::VectorXd& x_o) {
  if (x_o.norm() == 0.0) throw std::invalid_argument("zero ground truth");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(x_o.size());
  for (const auto& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double m = 0.0;
  for (const auto& x : xs) m = std::max(m, (x - mean).norm());
  return m / x_o.norm();
}

// ---------------------------------------------------------------------------
// Residual-norm audit (Division-2 / universal bound):
//   ||R_j(k)|| <= alpha_k * max_i ||A||_inf ||B||_{2,inf}
//                 * (2 L max_{k-H<=khat<=k, q} ||v_q(khat) - x*|| + L max ||x* - x^{lambda,r}||)
// ---------------------------------------------------------------------------

struct ResidualAudit {
  int violations = 0;
  double min_slack = std::numeric_limits<double>::infinity();  // relative (rhs-lhs)/rhs
  std::vector<int> violating_iterations;
};

inline double scheme_norm_product(const std::vector<CodingScheme>& schemes) {
  double m = 0.0;
  for (const auto& s : schemes) m = std::max(m, a_inf_norm(s.A) * b_2inf_norm(s.B));
  return m;
}

inline ResidualAudit audit_residual_bound(const TrialTrace& trace,
                                          const PartitionedProblem& problem,
                                          const std::vector<CodingScheme>& schemes,
                                          int delay_bound) {
  ResidualAudit audit;
  const double ab = scheme_norm_product(schemes);
  const double lips = problem.lipschitz();
  const double submin = problem.max_subpartition_minimizer_distance();
  for (std::size_t row = 1; row < trace.records.size(); ++row) {
    const int step_k = static_cast<int>(row) - 1;
    const double alpha_eff = trace.records[static_cast<std::size_t>(step_k)].alpha * trace.applied_scale;
    double wmax = 0.0;
    for (int khat = std::max(0, step_k - delay_bound); khat <= step_k; ++khat)
      wmax = std::max(wmax, trace.records[static_cast<std::size_t>(khat)].vmax_err);
    const double rhs = alpha_eff * ab * (2.0 * lips * wmax + lips * submin);
    const double lhs = trace.records[row].max_r_norm;
    if (lhs > rhs) {
      ++audit.violations;
      audit.violating_iterations.push_back(step_k);
    }
    if (rhs > 0.0) audit.min_slack = std::min(audit.min_slack, (rhs - lhs) / rhs);
  }
  return audit;
}

// ---------------------------------------------------------------------------
// Martingale bound-sequence generators for windowed recursions
// v_{k+1} <= a1 v_k + a2_k max_{k-B<=khat<=k} v_khat (+ a3_k).
// ---------------------------------------------------------------------------

struct BoundSequence {
  bool applicable = false;
  std::string note;
  double rho = 0.0;
  double v0 = 0.0;
  double eta = 0.0;
  int start_k = 0;                   // first index the envelope covers (kbar + B + 1)
  std::vector<double> values;        // envelope at start_k, start_k+1, ...

  double at(int k) const {
    if (k < start_k || k >= start_k + static_cast<int>(values.size()))
      throw std::out_of_range("bound sequence index");
    return values[static_cast<std::size_t>(k - start_k)];
  }
};

namespace detail {

// V0 via the window construction: sort the (B+1)-window descending and give
// the j-th largest value the exponent kbar + j - 1 (a bijective assignment;
// descending order yields the tightest admissible V0). `offset` subtracts a
// constant (the eta of the inhomogeneous lemma) before the assignment.
inline double window_v0(const std::vector<double>& v_hist, int kbar, int window, double rho,
                        double offset = 0.0) {
  std::vector<double> w;
  for (int k = kbar - window + 1; k <= kbar; ++k)
    w.push_back(v_hist[static_cast<std::size_t>(k)]);
  std::sort(w.rbegin(), w.rend());
  double v0 = 0.0;
  for (int j = 0; j < window; ++j) {
    const double num = std::max(w[static_cast<std::size_t>(j)] - offset, 0.0);
    v0 = std::max(v0, num / std::pow(rho, static_cast<double>(kbar + j)));
  }
  return v0;
}

}  // namespace detail

/// Homogeneous envelope: v_{k+1} <= a1 v_k + a2_k max window  ==>
/// v_k <= rho^k V0 for k >= kbar + B + 1, rho = (a1 + a2_kbar)^(1/(B+1)).
inline BoundSequence martingale_bound_1(double a1, const std::vector<double>& a2, int window_b,
                                        int kbar, const std::vector<double>& v_hist,
                                        int horizon) {
  BoundSequence seq;
  if (a1 < 0.0 || window_b < 0 || kbar < window_b) {
    seq.note = "preconditions violated: need a1 >= 0, B >= 0, kbar >= B";
    return seq;
  }
  if (static_cast<int>(v_hist.size()) <= kbar) {
    seq.note = "v history shorter than kbar";
    return seq;
  }
  for (std::size_t k = 0; k < a2.size(); ++k) {
    if (a2[k] < 0.0 || a1 + a2[k] > 1.0 + 1e-15) {
      seq.note = "preconditions violated: a1 + a2_k must stay within 1";
      return seq;
    }
    if (k > 0 && a2[k] > a2[k - 1] + 1e-15) {
      seq.note = "preconditions violated: a2 must be nonincreasing";
      return seq;
    }
  }
  if (kbar >= static_cast<int>(a2.size())) {
    seq.note = "a2 sequence shorter than kbar";
    return seq;
  }
  const double rho = std::pow(a1 + a2[static_cast<std::size_t>(kbar)],
                              1.0 / static_cast<double>(window_b + 1));
  seq.rho = rho;
  if (rho >= 1.0) {
    // a1 + a2_kbar == 1 makes the envelope flat; still valid.
    seq.v0 = 0.0;
    for (int k = kbar - window_b; k <= kbar; ++k)
      seq.v0 = std::max(seq.v0, v_hist[static_cast<std::size_t>(k)]);
  } else {
    seq.v0 = detail::window_v0(v_hist, kbar, window_b + 1, rho);
  }
  seq.start_k = kbar + window_b + 1;
  seq.values.reserve(static_cast<std::size_t>(std::max(0, horizon - seq.start_k + 1)));
  for (int k = seq.start_k; k <= horizon; ++k)
    seq.values.push_back(std::pow(rho, static_cast<double>(k)) * seq.v0);
  seq.applicable = true;
  return seq;
}

/// b_k = 1/(k + a)^theta schedule paired with the inhomogeneous envelope.
struct BkSchedule {
  double a = 1.0;
  double theta = 1.0;
  double at(int k) const { return std::pow(static_cast<double>(k) + a, -theta); }
};

/// Inhomogeneous envelope: v_{k+1} <= a1 v_k + a2_k max window + a3_k  ==>
/// v_k <= rho^k V0 + b_k eta for k >= kbar + B + 1. eta is the tightest
/// constant with a3_k <= b_{k+1} eta / l over the supplied range; hypotheses
/// additionally require a1 + a2_kbar <= (1 - 1/l)/(B+2)^theta.
inline BoundSequence martingale_bound_2(double a1, const std::vector<double>& a2,
                                        const std::vector<double>& a3, int window_b, int kbar,
                                        const BkSchedule& b, double l, double theta,
                                        const std::vector<double>& v_hist, int horizon) {
  BoundSequence seq;
  if (l < 1.0 || theta <= 0.0 || theta > 1.0) {
    seq.note = "preconditions violated: need l >= 1, theta in (0,1]";
    return seq;
  }
  if (kbar >= static_cast<int>(a2.size()) || kbar >= static_cast<int>(v_hist.size()) ||
      kbar < window_b) {
    seq.note = "sequence lengths / kbar invalid";
    return seq;
  }
  for (std::size_t k = 0; k < a2.size(); ++k) {
    if (a2[k] < 0.0 || a1 + a2[k] > 1.0 + 1e-15) {
      seq.note = "preconditions violated: a1 + a2_k must stay within 1";
      return seq;
    }
    if (k > 0 && a2[k] > a2[k - 1] + 1e-15) {
      seq.note = "preconditions violated: a2 must be nonincreasing";
      return seq;
    }
  }
  // Feasibility of the lemma's (a1 <= 1-mu, a2_kbar <= (1-1/l)/(B+2)^theta + mu - 1)
  // pair for some mu in (0,1), with mu eliminated:
  const double budget = (1.0 - 1.0 / l) / std::pow(static_cast<double>(window_b) + 2.0, theta);
  if (a1 + a2[static_cast<std::size_t>(kbar)] > budget + 1e-15) {
    seq.note = "hypothesis violated: a1 + a2_kbar exceeds (1-1/l)/(B+2)^theta";
    return seq;
  }
  double eta = 0.0;
  for (std::size_t k = 0; k < a3.size(); ++k) {
    if (a3[k] < 0.0) {
      seq.note = "preconditions violated: a3 must be nonnegative";
      return seq;
    }
    eta = std::max(eta, l * a3[k] / b.at(static_cast<int>(k) + 1));
  }
  seq.eta = eta;
  const double rho = std::pow(a1 + a2[static_cast<std::size_t>(kbar)],
                              1.0 / static_cast<double>(window_b + 1));
  seq.rho = rho;
  // The induction consumes window bounds of the form rho^exp * V0 (the +eta
  // slack is not available to the window terms), so V0 uses the raw values.
  seq.v0 = rho >= 1.0 ? 0.0 : detail::window_v0(v_hist, kbar, window_b + 1, rho);
  if (rho >= 1.0)
    for (int k = kbar - window_b; k <= kbar; ++k)
      seq.v0 = std::max(seq.v0, v_hist[static_cast<std::size_t>(k)]);
  seq.start_k = kbar + window_b + 1;
  for (int k = seq.start_k; k <= horizon; ++k)
    seq.values.push_back(std::pow(rho, static_cast<double>(k)) * seq.v0 + b.at(k) * eta);
  seq.applicable = true;
  return seq;
}

// ---------------------------------------------------------------------------
// Convergence-rate envelopes.
// ---------------------------------------------------------------------------

struct RateBase {
  bool vacuous = true;
  double base = 0.0;
};

/// Strongly-convex Division-1 rate base:
///   1 - mu + 4 (1-gamma0) L alpha ||A||_inf ||B||_{2,inf}
///       * (1 + 2 L alpha ||A||_inf ||B||_{2,inf})
/// The envelope is base^(k/(H+1)) V0 for k >= kbar1 + H + 1 when base < 1.
inline RateBase rate_base_scenario1(double lips, double ab_norm, double mu, double gamma0,
                                    double alpha_at_kbar) {
  RateBase r;
  const double lac = lips * alpha_at_kbar * ab_norm;
  r.base = 1.0 - mu + 4.0 * (1.0 - gamma0) * lac * (1.0 + 2.0 * lac);
  r.vacuous = !(r.base > 0.0 && r.base < 1.0);
  return r;
}

struct RateEnvelopeReport {
  bool vacuous = true;
  double base = 0.0;
  int kbar = 0;
  double v0 = 0.0;
  int start_k = 0;
  int violations = 0;
};

/// Scans for the earliest kbar1 with a non-vacuous base, builds the envelope
/// from the trace's sum ||v_i - x*||^2 window, writes it into bound_env_1 and
/// checks domination past burn-in. Alphas are the applied stepsizes.
inline RateEnvelopeReport overlay_rate_scenario1(TrialTrace& trace,
                                                 const PartitionedProblem& problem,
                                                 const std::vector<CodingScheme>& schemes,
                                                 double mu, double gamma0) {
  RateEnvelopeReport rep;
  const double ab = scheme_norm_product(schemes);
  const double lips = problem.lipschitz();
  const int h = trace.delay_bound;
  const int kmax = static_cast<int>(trace.records.size()) - 1;
  for (int kbar = h; kbar <= kmax; ++kbar) {
    const double alpha_eff = trace.records[static_cast<std::size_t>(kbar)].alpha * trace.applied_scale;
    const RateBase base = rate_base_scenario1(lips, ab, mu, gamma0, alpha_eff);
    if (base.vacuous) continue;
    rep.vacuous = false;
    rep.base = base.base;
    rep.kbar = kbar;
    break;
  }
  if (rep.vacuous) return rep;

  const double rho = std::pow(rep.base, 1.0 / static_cast<double>(h + 1));
  std::vector<double> sumsq;
  sumsq.reserve(trace.records.size());
  for (const auto& r : trace.records) sumsq.push_back(r.sumsq_v_err);
  rep.v0 = detail::window_v0(sumsq, rep.kbar, h + 1, rho);
  rep.start_k = rep.kbar + h + 1;
  for (int k = rep.start_k; k <= kmax; ++k) {
    const double env = std::pow(rho, static_cast<double>(k)) * rep.v0;
    trace.records[static_cast<std::size_t>(k)].bound_env_1 = env;
    if (sumsq[static_cast<std::size_t>(k)] > env * (1.0 + 1e-12)) ++rep.violations;
  }
  return rep;
}

// General-rate overlay constants (the Division-2-capable envelope).
struct RhoEta3 {
  bool vacuous = true;
  double rho3 = 0.0;
  double eta3 = 0.0;
  double eta31 = 0.0;
  double eta32 = 0.0;
};

/// rho3 and eta3 = eta3,1 / eta3,2 evaluated at alpha(kbar3); the
/// report is vacuous when eta3,2 <= 0 or rho3 >= 1.
inline RhoEta3 rho_eta_general_rate(double lips, double ab_norm, double mu, double gamma0,
                                  int p, double gamma_max, double alpha_kbar3, int n_servers,
                                  int cardinality_i, double max_partition_min_dist,
                                  double max_subpartition_min_dist, int delay_bound) {
  RhoEta3 out;
  const double a = alpha_kbar3;
  const double pd = static_cast<double>(p);
  const double inner = (1.0 - mu) + 4.0 * pd * lips * a * ab_norm +
                       8.0 * pd * (1.0 - gamma0) * lips * lips * a * a * ab_norm * ab_norm +
                       8.0 * (1.0 - gamma0) * a * a * pd * gamma_max * lips * lips +
                       a * (1.0 + 4.0 * (1.0 - gamma0) * a * lips) * pd * lips;
  out.rho3 = std::pow(inner, 1.0 / static_cast<double>(delay_bound + 1));
  out.eta31 = 2.0 * a * static_cast<double>(n_servers) *
                  (static_cast<double>(cardinality_i) + 2.0 * pd) * gamma_max * lips *
                  max_partition_min_dist * max_partition_min_dist +
              (1.0 / (1.0 - mu)) * a * static_cast<double>(n_servers) *
                  (1.0 + 4.0 * (1.0 - gamma0) * a * lips * ab_norm) * pd * lips * ab_norm *
                  max_subpartition_min_dist * max_subpartition_min_dist;
  out.eta32 = mu - 4.0 * pd * lips * a * ab_norm -
              8.0 * pd * (1.0 - gamma0) * lips * lips * a * a * ab_norm * ab_norm -
              8.0 * (1.0 - gamma0) * a * a * pd * gamma_max * lips * lips +
              a * (1.0 + 4.0 * (1.0 - gamma0) * a * lips) * pd * lips;
  if (out.eta32 <= 0.0 || !(out.rho3 > 0.0 && out.rho3 < 1.0)) return out;
  out.eta3 = out.eta31 / out.eta32;
  out.vacuous = false;
  return out;
}

/// Fills bound_env_2 with rho3^k V0 + alpha_k eta3 when non-vacuous.
inline RhoEta3 overlay_rate_general(TrialTrace& trace, const PartitionedProblem& problem,
                                    const std::vector<CodingScheme>& schemes, double mu,
                                    double gamma0, double gamma_max, int cardinality_i,
                                    double max_partition_min_dist, int kbar3) {
  const int h = trace.delay_bound;
  const double alpha_eff = trace.records[static_cast<std::size_t>(kbar3)].alpha * trace.applied_scale;
  RhoEta3 re = rho_eta_general_rate(problem.lipschitz(), scheme_norm_product(schemes), mu,
                                  gamma0, problem.partitions(), gamma_max, alpha_eff,
                                  trace.n_servers, cardinality_i, max_partition_min_dist,
                                  problem.max_subpartition_minimizer_distance(), h);
  if (re.vacuous) return re;
  std::vector<double> sumsq;
  for (const auto& r : trace.records) sumsq.push_back(r.sumsq_v_err);
  const double v0 = detail::window_v0(sumsq, kbar3, h + 1, re.rho3, 0.0);
  for (int k = kbar3 + h + 1; k < static_cast<int>(trace.records.size()); ++k) {
    const double bk = trace.records[static_cast<std::size_t>(k)].alpha * trace.applied_scale;
    trace.records[static_cast<std::size_t>(k)].bound_env_2 =
        std::pow(re.rho3, static_cast<double>(k)) * v0 + bk * re.eta3;
  }
  return re;
}

/// Damped-recursion limit: d_k <= c d_{k-1} + u_{k-1} gives
/// limsup d <= (1/(1-c)) limsup u; the limsup proxy is the max of u over the
/// final 10% of samples (at least 50, or the whole sequence when shorter).
inline double limsup_rate_bound(double c, const std::vector<double>& u) {
  if (!(c > 0.0 && c < 1.0)) throw std::invalid_argument("c must lie in (0,1)");
  if (u.empty()) return 0.0;
  std::size_t window = std::max<std::size_t>(u.size() / 10, 50);
  window = std::min(window, u.size());
  double m = 0.0;
  for (std::size_t i = u.size() - window; i < u.size(); ++i) m = std::max(m, u[i]);
  return m / (1.0 - c);
}

}  // namespace srdo
