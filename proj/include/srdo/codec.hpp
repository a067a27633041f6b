#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "srdo/rng.hpp"

namespace srdo {

/// Encoder/decoder pair for one partition replica. B is n x n with s+1
/// nonzeros per row at cyclic positions; A has one row per straggler pattern
/// (every (n-s)-subset of workers) and A*B equals the all-ones matrix.
struct CodingScheme {
  int n_workers = 0;
  int s = 0;
  Eigen::MatrixXd B;
  Eigen::MatrixXd A;
  std::vector<std::vector<int>> row_supports;  // support of each row of A
};

struct FitSelection {
  int fit_index = 0;
  std::vector<int> fit_support;
  std::vector<int> usable_workers;  // connected workers inside fit_support
};

/// Max absolute row sum of A (operator infinity norm).
inline double a_inf_norm(const Eigen::MatrixXd& a) {
  return a.cwiseAbs().rowwise().sum().maxCoeff();
}

/// Max row l2 norm of B.
inline double b_2inf_norm(const Eigen::MatrixXd& b) {
  return b.rowwise().norm().maxCoeff();
}

namespace detail {

inline double condition_estimate(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) <= 0.0)
    return std::numeric_limits<double>::infinity();
  return sv(0) / sv(sv.size() - 1);
}

// Lexicographic enumeration of all size-k subsets of {0..n-1}.
inline std::vector<std::vector<int>> subsets_lex(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(k);
  for (int i = 0; i < k; ++i) cur[i] = i;
  while (true) {
    out.push_back(cur);
    int i = k - 1;
    while (i >= 0 && cur[i] == n - k + i) --i;
    if (i < 0) break;
    ++cur[i];
    for (int j = i + 1; j < k; ++j) cur[j] = cur[j - 1] + 1;
  }
  return out;
}

}  // namespace detail

/// Cyclic-support encoder. The auxiliary matrix H is s x n standard normal
/// with the last column replaced by the negated row sums; row i carries a
/// leading 1 at column i and its s trailing coefficients solve the s x s
/// system against H. Near-singular per-row systems trigger a full resample of
/// H with the next seed in the stream (at most max_retries).
inline Eigen::MatrixXd build_cyclic_encoder(int n_workers, int s,
                                            std::uint64_t rng_seed,
                                            int max_retries = 16) {
  if (n_workers <= 0) throw std::invalid_argument("n_workers must be positive");
  if (s < 0 || s >= n_workers)
    throw std::invalid_argument("straggler budget s must satisfy 0 <= s < n_workers");
  const int n = n_workers;
  if (s == 0) return Eigen::MatrixXd::Identity(n, n);

  for (int attempt = 0; attempt < max_retries; ++attempt) {
    BulkSampler rng(stream_key(rng_seed, "codec.H", static_cast<std::uint64_t>(attempt)));
    Eigen::MatrixXd h(s, n);
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < n; ++j) h(i, j) = rng.normal();
    h.col(n - 1) = -h.leftCols(n - 1).rowwise().sum();

    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      std::vector<int> cols(s + 1);
      for (int t = 0; t <= s; ++t) cols[t] = (i + t) % n;
      Eigen::MatrixXd m(s, s);
      for (int t = 1; t <= s; ++t) m.col(t - 1) = h.col(cols[t]);
      if (detail::condition_estimate(m) > 1e8) {
        ok = false;
        break;
      }
      Eigen::VectorXd rest = -m.partialPivLu().solve(h.col(cols[0]));
      b(i, cols[0]) = 1.0;
      for (int t = 1; t <= s; ++t) b(i, cols[t]) = rest(t - 1);
    }
    if (ok) return b;
  }
  throw std::runtime_error("build_cyclic_encoder: no well-conditioned H within retry budget");
}

/// Decoder rows: for every (n-s)-subset I of workers, in lexicographic order,
/// the row solves a(I) * B(I,:) = ones and is zero elsewhere.
inline Eigen::MatrixXd build_decoder(const Eigen::MatrixXd& b, int s,
                                     std::vector<std::vector<int>>* supports = nullptr) {
  const int n = static_cast<int>(b.rows());
  if (b.cols() != n) throw std::invalid_argument("encoder B must be square");
  if (s < 0 || s >= n) throw std::invalid_argument("invalid straggler budget");
  const auto subsets = detail::subsets_lex(n, n - s);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(subsets.size()), n);
  if (supports) supports->clear();

  for (std::size_t r = 0; r < subsets.size(); ++r) {
    const auto& idx = subsets[r];
    // Solve B(I,:)^T x = ones(n); consistent by construction of B.
    Eigen::MatrixXd bt(n, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) bt.col(static_cast<Eigen::Index>(c)) = b.row(idx[c]).transpose();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(bt);
    if (qr.rank() < static_cast<Eigen::Index>(idx.size()))
      throw std::runtime_error("build_decoder: singular survivor submatrix for subset {" +
                               [&] {
                                 std::string t;
                                 for (int v : idx) t += std::to_string(v + 1) + ",";
                                 if (!t.empty()) t.pop_back();
                                 return t;
                               }() + "}");
    Eigen::VectorXd x = qr.solve(Eigen::VectorXd::Ones(n));
    if ((bt * x - Eigen::VectorXd::Ones(n)).cwiseAbs().maxCoeff() > 1e-6)
      throw std::runtime_error("build_decoder: inconsistent survivor system (degenerate encoder)");
    for (std::size_t c = 0; c < idx.size(); ++c) a(static_cast<Eigen::Index>(r), idx[c]) = x(static_cast<Eigen::Index>(c));
    if (supports) supports->push_back(idx);
  }
  return a;
}

struct VerifyResult {
  bool ok = false;
  double max_deviation = 0.0;
};

/// Checks A*B == all-ones within tol (max elementwise deviation).
inline VerifyResult verify_scheme(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                  double tol) {
  if (a.cols() != b.rows()) throw std::invalid_argument("verify_scheme: shape mismatch");
  const Eigen::MatrixXd prod = a * b;
  const double dev = (prod.array() - 1.0).abs().maxCoeff();
  return {dev <= tol, dev};
}

/// Builds encoder + decoder, resampling the encoder when the decoder reports a
/// degenerate survivor submatrix.
inline CodingScheme make_coding_scheme(int n_workers, int s, std::uint64_t rng_seed,
                                       int max_retries = 16) {
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    CodingScheme scheme;
    scheme.n_workers = n_workers;
    scheme.s = s;
    scheme.B = build_cyclic_encoder(n_workers, s, rng_seed + static_cast<std::uint64_t>(attempt) * 0x51ED2701ull,
                                    max_retries);
    try {
      scheme.A = build_decoder(scheme.B, s, &scheme.row_supports);
    } catch (const std::runtime_error&) {
      continue;  // degenerate draw; resample encoder
    }
    return scheme;
  }
  throw std::runtime_error("make_coding_scheme: retry budget exhausted");
}

/// Picks the decoder row whose support has maximum intersection with the
/// connected worker set; ties break toward the lowest row index. Pure.
inline FitSelection select_fit_row(const std::vector<std::vector<int>>& supports,
                                   const std::vector<int>& connected) {
  FitSelection sel;
  int best = -1;
  for (std::size_t r = 0; r < supports.size(); ++r) {
    int inter = 0;
    for (int w : supports[r])
      if (std::find(connected.begin(), connected.end(), w) != connected.end()) ++inter;
    if (inter > best) {
      best = inter;
      sel.fit_index = static_cast<int>(r);
    }
  }
  sel.fit_support = supports[static_cast<std::size_t>(sel.fit_index)];
  for (int w : sel.fit_support)
    if (std::find(connected.begin(), connected.end(), w) != connected.end())
      sel.usable_workers.push_back(w);
  return sel;
}

/// Weighted sum of the available coded gradients over the fit row. Workers in
/// the fit support but absent from `coded` contribute zero.
inline Eigen::VectorXd decode_partition_gradient(
    const CodingScheme& scheme, const FitSelection& fit,
    const std::map<int, Eigen::VectorXd>& coded, Eigen::Index dim) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
  for (int w : fit.usable_workers) {
    auto it = coded.find(w);
    if (it == coded.end())
      throw std::invalid_argument("decode: missing coded gradient for usable worker " +
                                  std::to_string(w + 1));
    if (it->second.size() != dim)
      throw std::invalid_argument("decode: coded gradient dimension mismatch");
    out += scheme.A(fit.fit_index, w) * it->second;
  }
  return out;
}

}  // namespace srdo
