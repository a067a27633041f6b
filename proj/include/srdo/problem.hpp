#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "srdo/codec.hpp"
#include "srdo/csv.hpp"
#include "srdo/rng.hpp"

namespace srdo {

/// Row range [begin, end) of G belonging to one subpartition.
struct RowRange {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
};

/// Partitioned least-squares objective f(x) = ||G x - y||^2 split into p
/// partitions of n_r subpartitions with mbar rows each. Replicas of a
/// partition share its rows (the layout indexes them for completeness; the
/// simulation uses one replica per partition). Immutable after generation.
class PartitionedProblem {
 public:
  PartitionedProblem(Eigen::MatrixXd g, Eigen::VectorXd y, Eigen::VectorXd x_o,
                     int p, int n_r, Eigen::Index mbar, int replicas = 1)
      : G_(std::move(g)),
        y_(std::move(y)),
        x_o_(std::move(x_o)),
        p_(p),
        n_r_(n_r),
        mbar_(mbar),
        replicas_(replicas) {
    if (p_ <= 0 || n_r_ <= 0 || mbar_ <= 0 || replicas_ <= 0)
      throw std::invalid_argument("problem dimensions must be positive");
    if (G_.rows() != static_cast<Eigen::Index>(p_) * n_r_ * mbar_)
      throw std::invalid_argument("G row count does not match p * n_r * mbar");
    if (y_.size() != G_.rows() || x_o_.size() != G_.cols())
      throw std::invalid_argument("y / x_o dimension mismatch");
    compute_constants();
  }

  Eigen::Index dim() const { return G_.cols(); }
  Eigen::Index rows() const { return G_.rows(); }
  int partitions() const { return p_; }
  int workers_per_replica() const { return n_r_; }
  Eigen::Index subpartition_rows() const { return mbar_; }
  Eigen::Index partition_rows() const { return static_cast<Eigen::Index>(n_r_) * mbar_; }
  int replicas() const { return replicas_; }
  const Eigen::MatrixXd& G() const { return G_; }
  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::VectorXd& ground_truth() const { return x_o_; }

  RowRange row_range(int iota, int replica, int lambda) const {
    check_indices(iota, replica, lambda);
    const Eigen::Index base = static_cast<Eigen::Index>(iota) * partition_rows() +
                              static_cast<Eigen::Index>(lambda) * mbar_;
    return {base, base + mbar_};
  }

  double objective(const Eigen::VectorXd& x) const {
    return (G_ * x - y_).squaredNorm();
  }

  double partition_objective(int iota, const Eigen::VectorXd& x) const {
    check_indices(iota, 0, 0);
    const auto b = block(iota);
    return (G_.middleRows(b.begin, b.end - b.begin) * x -
            y_.segment(b.begin, b.end - b.begin))
        .squaredNorm();
  }

  double subpartition_objective(int iota, int replica, int lambda,
                                const Eigen::VectorXd& x) const {
    const RowRange r = row_range(iota, replica, lambda);
    return (G_.middleRows(r.begin, r.end - r.begin) * x -
            y_.segment(r.begin, r.end - r.begin))
        .squaredNorm();
  }

  /// 2 * Gb^T (Gb x - yb) over the (iota, replica, lambda) rows. Wide blocks
  /// use the precomputed normal-equation form 2(Gb^T Gb) x - 2 Gb^T yb.
  Eigen::VectorXd subpartition_gradient(int iota, int replica, int lambda,
                                        const Eigen::VectorXd& x) const {
    check_indices(iota, replica, lambda);
    if (!block_q_.empty()) {
      const std::size_t idx = static_cast<std::size_t>(iota) * n_r_ + lambda;
      return block_q_[idx] * x - block_b_[idx];
    }
    const RowRange r = row_range(iota, replica, lambda);
    const auto gb = G_.middleRows(r.begin, r.end - r.begin);
    const auto yb = y_.segment(r.begin, r.end - r.begin);
    return 2.0 * (gb.transpose() * (gb * x - yb));
  }

  /// Row w of B applied to the stacked subpartition gradients (B-support only).
  Eigen::VectorXd coded_worker_gradient(const CodingScheme& scheme, int iota,
                                        int replica, int w,
                                        const Eigen::VectorXd& x) const {
    if (w < 0 || w >= n_r_) throw std::out_of_range("worker index out of range");
    if (scheme.n_workers != n_r_)
      throw std::invalid_argument("scheme size does not match replica size");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
    for (int lambda = 0; lambda < n_r_; ++lambda) {
      const double c = scheme.B(w, lambda);
      if (c != 0.0) out += c * subpartition_gradient(iota, replica, lambda, x);
    }
    return out;
  }

  Eigen::VectorXd partition_gradient(int iota, const Eigen::VectorXd& x) const {
    check_indices(iota, 0, 0);
    const auto b = block(iota);
    const auto gp = G_.middleRows(b.begin, b.end - b.begin);
    const auto yp = y_.segment(b.begin, b.end - b.begin);
    return 2.0 * (gp.transpose() * (gp * x - yp));
  }

  Eigen::VectorXd full_gradient(const Eigen::VectorXd& x) const {
    return 2.0 * (G_.transpose() * (G_ * x - y_));
  }

  /// Least-squares solution of the (overdetermined, full-rank) system.
  Eigen::VectorXd optimum() const {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(G_);
    if (qr.rank() < G_.cols())
      throw std::runtime_error(
          "optimum: G is rank-deficient (rank " + std::to_string(qr.rank()) +
          " < " + std::to_string(G_.cols()) + "); regenerate with a new seed");
    return qr.solve(y_);
  }

  const std::vector<double>& partition_lipschitz() const { return lipschitz_; }
  double lipschitz() const { return lipschitz_global_; }

  /// Min-norm minimizer of the subpartition objective.
  const Eigen::VectorXd& subpartition_minimizer(int iota, int replica, int lambda) const {
    check_indices(iota, replica, lambda);
    return sub_minimizers_[static_cast<std::size_t>(iota) * n_r_ + lambda];
  }

  /// max over (iota, lambda) of || x* - x^{lambda,r} || with x* = ground truth.
  double max_subpartition_minimizer_distance() const { return max_submin_dist_; }

  /// Min-norm minimizer of the partition objective.
  const Eigen::VectorXd& partition_minimizer(int iota) const {
    check_indices(iota, 0, 0);
    return part_minimizers_[static_cast<std::size_t>(iota)];
  }

  /// max over partitions of || x* - x^(iota) ||.
  double max_partition_minimizer_distance() const { return max_partmin_dist_; }

  /// Number of partitions whose minimizer differs from the ground truth
  /// beyond tol (the |I| of the general rate overlay).
  int misaligned_partition_count(double tol = 1e-8) const {
    int c = 0;
    for (const auto& xm : part_minimizers_)
      if ((x_o_ - xm).norm() > tol) ++c;
    return c;
  }

  void dump(const std::string& prefix) const {
    write_matrix_csv(G_, prefix + "_G.csv");
    write_matrix_csv(y_, prefix + "_y.csv");
    write_matrix_csv(x_o_, prefix + "_xo.csv");
    Eigen::MatrixXd meta(1, 4);
    meta << static_cast<double>(p_), static_cast<double>(n_r_),
        static_cast<double>(mbar_), static_cast<double>(replicas_);
    write_matrix_csv(meta, prefix + "_meta.csv");
  }

  static PartitionedProblem load(const std::string& prefix) {
    Eigen::MatrixXd meta = read_matrix_csv(prefix + "_meta.csv");
    if (meta.rows() != 1 || meta.cols() != 4)
      throw std::runtime_error("bad problem meta file");
    Eigen::MatrixXd g = read_matrix_csv(prefix + "_G.csv");
    Eigen::MatrixXd y = read_matrix_csv(prefix + "_y.csv");
    Eigen::MatrixXd xo = read_matrix_csv(prefix + "_xo.csv");
    return PartitionedProblem(std::move(g), y.col(0), xo.col(0),
                              static_cast<int>(meta(0, 0)), static_cast<int>(meta(0, 1)),
                              static_cast<Eigen::Index>(meta(0, 2)), static_cast<int>(meta(0, 3)));
  }

 private:
  RowRange block(int iota) const {
    const Eigen::Index base = static_cast<Eigen::Index>(iota) * partition_rows();
    return {base, base + partition_rows()};
  }

  void check_indices(int iota, int replica, int lambda) const {
    if (iota < 0 || iota >= p_) throw std::out_of_range("partition index out of range");
    if (replica < 0 || replica >= replicas_) throw std::out_of_range("replica index out of range");
    if (lambda < 0 || lambda >= n_r_) throw std::out_of_range("subpartition index out of range");
  }

  void compute_constants() {
    lipschitz_.resize(static_cast<std::size_t>(p_));
    for (int i = 0; i < p_; ++i) {
      const auto b = block(i);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(G_.middleRows(b.begin, b.end - b.begin));
      const double smax = svd.singularValues()(0);
      lipschitz_[static_cast<std::size_t>(i)] = 2.0 * smax * smax;
    }
    lipschitz_global_ = *std::max_element(lipschitz_.begin(), lipschitz_.end());

    sub_minimizers_.reserve(static_cast<std::size_t>(p_) * n_r_);
    max_submin_dist_ = 0.0;
    for (int i = 0; i < p_; ++i) {
      for (int l = 0; l < n_r_; ++l) {
        const RowRange r = row_range(i, 0, l);
        Eigen::BDCSVD<Eigen::MatrixXd> svd(G_.middleRows(r.begin, r.end - r.begin),
                                           Eigen::ComputeThinU | Eigen::ComputeThinV);
        Eigen::VectorXd xm = svd.solve(y_.segment(r.begin, r.end - r.begin));
        max_submin_dist_ = std::max(max_submin_dist_, (x_o_ - xm).norm());
        sub_minimizers_.push_back(std::move(xm));
      }
    }

    part_minimizers_.reserve(static_cast<std::size_t>(p_));
    max_partmin_dist_ = 0.0;
    for (int i = 0; i < p_; ++i) {
      const auto b = block(i);
      Eigen::BDCSVD<Eigen::MatrixXd> svd(G_.middleRows(b.begin, b.end - b.begin),
                                         Eigen::ComputeThinU | Eigen::ComputeThinV);
      Eigen::VectorXd xm = svd.solve(y_.segment(b.begin, b.end - b.begin));
      max_partmin_dist_ = std::max(max_partmin_dist_, (x_o_ - xm).norm());
      part_minimizers_.push_back(std::move(xm));
    }

    // Normal-equation caches pay off once blocks are at least half-square.
    if (mbar_ * 2 >= G_.cols()) {
      block_q_.reserve(static_cast<std::size_t>(p_) * n_r_);
      block_b_.reserve(static_cast<std::size_t>(p_) * n_r_);
      for (int i = 0; i < p_; ++i) {
        for (int l = 0; l < n_r_; ++l) {
          const RowRange r = row_range(i, 0, l);
          const auto gb = G_.middleRows(r.begin, r.end - r.begin);
          block_q_.push_back(2.0 * (gb.transpose() * gb));
          block_b_.push_back(2.0 * (gb.transpose() * y_.segment(r.begin, r.end - r.begin)));
        }
      }
    }
  }

  Eigen::MatrixXd G_;
  Eigen::VectorXd y_;
  Eigen::VectorXd x_o_;
  int p_;
  int n_r_;
  Eigen::Index mbar_;
  int replicas_;
  std::vector<double> lipschitz_;
  double lipschitz_global_ = 0.0;
  std::vector<Eigen::VectorXd> sub_minimizers_;
  double max_submin_dist_ = 0.0;
  std::vector<Eigen::VectorXd> part_minimizers_;
  double max_partmin_dist_ = 0.0;
  std::vector<Eigen::MatrixXd> block_q_;
  std::vector<Eigen::VectorXd> block_b_;
};

/// G has i.i.d. standard normal entries, x_o i.i.d. uniform on [-1, 1], and
/// y = G x_o (consistent system). Deterministic in the seed.
inline PartitionedProblem generate_least_squares(Eigen::Index n_dim, Eigen::Index mbar,
                                                 int p, int n_r, std::uint64_t seed) {
  if (n_dim <= 0 || mbar <= 0 || p <= 0 || n_r <= 0)
    throw std::invalid_argument("all problem dimensions must be positive");
  const Eigen::Index m = static_cast<Eigen::Index>(p) * n_r * mbar;
  if (m < n_dim)
    throw std::invalid_argument("system must be overdetermined: p * n_r * mbar >= N");

  BulkSampler g_rng(stream_key(seed, "problem.G"));
  Eigen::MatrixXd g(m, n_dim);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n_dim; ++j) g(i, j) = g_rng.normal();

  BulkSampler x_rng(stream_key(seed, "problem.x_o"));
  Eigen::VectorXd xo(n_dim);
  for (Eigen::Index j = 0; j < n_dim; ++j) xo(j) = x_rng.uniform(-1.0, 1.0);

  Eigen::VectorXd y = g * xo;
  return PartitionedProblem(std::move(g), std::move(y), std::move(xo), p, n_r, mbar);
}

}  // namespace srdo
