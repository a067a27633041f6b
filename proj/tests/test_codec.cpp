#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "srdo/codec.hpp"
#include "srdo/problem.hpp"

using namespace srdo;

namespace {

std::vector<int> row_support(const Eigen::MatrixXd& m, int row) {
  std::vector<int> out;
  for (int j = 0; j < m.cols(); ++j)
    if (m(row, j) != 0.0) out.push_back(j);
  return out;
}

// All size-k subsets of {0..n-1}, used to brute-force straggler patterns.
std::vector<std::vector<int>> subsets(int n, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) cur[static_cast<std::size_t>(i)] = i;
  if (k == 0) return {std::vector<int>{}};
  while (true) {
    out.push_back(cur);
    int i = k - 1;
    while (i >= 0 && cur[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++cur[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j)
      cur[static_cast<std::size_t>(j)] = cur[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

}  // namespace

TEST_CASE("cyclic encoder with s=0 is the identity") {
  const Eigen::MatrixXd b = build_cyclic_encoder(3, 0, 42);
  REQUIRE((b - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cyclic encoder row structure (n=3, s=1)") {
  const Eigen::MatrixXd b = build_cyclic_encoder(3, 1, 7);
  REQUIRE(row_support(b, 0) == std::vector<int>{0, 1});
  REQUIRE(row_support(b, 1) == std::vector<int>{1, 2});
  REQUIRE(row_support(b, 2) == std::vector<int>{0, 2});
  CHECK(b(0, 0) == 1.0);
  CHECK(b(1, 1) == 1.0);
  CHECK(b(2, 2) == 1.0);
}

TEST_CASE("encoder rejects s >= n") {
  CHECK_THROWS_AS(build_cyclic_encoder(3, 3, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_cyclic_encoder(3, -1, 1), std::invalid_argument);
}

TEST_CASE("decoder of the identity encoder is a single all-ones row") {
  const Eigen::MatrixXd b = Eigen::MatrixXd::Identity(3, 3);
  std::vector<std::vector<int>> sup;
  const Eigen::MatrixXd a = build_decoder(b, 0, &sup);
  REQUIRE(a.rows() == 1);
  REQUIRE(a.cols() == 3);
  CHECK((a - Eigen::MatrixXd::Ones(1, 3)).cwiseAbs().maxCoeff() < 1e-14);
  REQUIRE(sup.size() == 1);
  CHECK(sup[0] == std::vector<int>{0, 1, 2});
}

TEST_CASE("decoder shapes and supports") {
  SECTION("n=3 s=1") {
    const CodingScheme s = make_coding_scheme(3, 1, 7);
    REQUIRE(s.A.rows() == 3);
    REQUIRE(s.A.cols() == 3);
    for (int r = 0; r < 3; ++r) CHECK(row_support(s.A, r).size() == 2);
    CHECK(verify_scheme(s.A, s.B, 1e-8).ok);
  }
  SECTION("n=5 s=2") {
    const CodingScheme s = make_coding_scheme(5, 2, 7);
    REQUIRE(s.A.rows() == 10);  // C(5,2)
    REQUIRE(s.A.cols() == 5);
    for (int r = 0; r < 10; ++r) CHECK(row_support(s.A, r).size() == 3);
    for (int r = 0; r < 5; ++r) CHECK(row_support(s.B, r).size() == 3);
    CHECK(verify_scheme(s.A, s.B, 1e-8).ok);
  }
}

TEST_CASE("verify_scheme reports deviations") {
  SECTION("exact identity pair") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Ones(1, 3);
    const VerifyResult v = verify_scheme(a, Eigen::MatrixXd::Identity(3, 3), 0.0);
    CHECK(v.ok);
    CHECK(v.max_deviation == 0.0);
  }
  SECTION("perturbed entry fails with the predicted deviation") {
    const CodingScheme s = make_coding_scheme(3, 1, 7);
    Eigen::MatrixXd a = s.A;
    const double delta = 1e-3;
    a(1, row_support(a, 1)[0]) += delta;
    const int col = row_support(s.A, 1)[0];
    // Perturbing A(1,c) by delta moves row 1 of A*B by delta * B(c, :).
    const double predicted = (verify_scheme(s.A, s.B, 1.0).max_deviation +
                              delta * s.B.row(col).cwiseAbs().maxCoeff());
    const VerifyResult v = verify_scheme(a, s.B, 1e-8);
    CHECK_FALSE(v.ok);
    CHECK(v.max_deviation == Catch::Approx(predicted).epsilon(1e-4));
  }
  SECTION("shape mismatch") {
    CHECK_THROWS_AS(verify_scheme(Eigen::MatrixXd::Ones(1, 2), Eigen::MatrixXd::Identity(3, 3), 0.1),
                    std::invalid_argument);
  }
}

TEST_CASE("verify_scheme holds across the (n, s) grid") {
  for (int n : {3, 4, 5, 8, 10}) {
    for (int s : {0, 1, 2}) {
      if (s >= n) continue;
      for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const CodingScheme scheme = make_coding_scheme(n, s, seed);
        const VerifyResult v = verify_scheme(scheme.A, scheme.B, 1e-8);
        INFO("n=" << n << " s=" << s << " seed=" << seed << " dev=" << v.max_deviation);
        REQUIRE(v.ok);
      }
    }
  }
}

TEST_CASE("fit row selection") {
  const CodingScheme s = make_coding_scheme(3, 1, 7);
  // Supports are the size-2 subsets in lexicographic order: {0,1},{0,2},{1,2}.
  SECTION("full connection ties break to the lowest row") {
    const FitSelection f = select_fit_row(s.row_supports, {0, 1, 2});
    CHECK(f.fit_index == 0);
    CHECK(f.usable_workers == std::vector<int>{0, 1});
  }
  SECTION("exact support match") {
    const FitSelection f = select_fit_row(s.row_supports, {1, 2});
    CHECK(f.fit_index == 2);
    CHECK(f.usable_workers == std::vector<int>{1, 2});
  }
  SECTION("single worker picks the lowest containing row") {
    const FitSelection f = select_fit_row(s.row_supports, {2});
    CHECK(f.fit_index == 1);  // {0,2} precedes {1,2}
    CHECK(f.usable_workers == std::vector<int>{2});
  }
  SECTION("empty connection yields row 0 with empty usable set") {
    const FitSelection f = select_fit_row(s.row_supports, {});
    CHECK(f.fit_index == 0);
    CHECK(f.usable_workers.empty());
  }
  SECTION("pure function") {
    const FitSelection f1 = select_fit_row(s.row_supports, {0, 2});
    const FitSelection f2 = select_fit_row(s.row_supports, {0, 2});
    CHECK(f1.fit_index == f2.fit_index);
    CHECK(f1.usable_workers == f2.usable_workers);
  }
}

TEST_CASE("decode recovers the exact partition gradient") {
  // One partition with n_r = 5 subpartitions; common evaluation point.
  const auto problem = generate_least_squares(12, 4, 1, 5, 3);
  const CodingScheme scheme = make_coding_scheme(5, 2, 7);
  BulkSampler rng(99);
  Eigen::VectorXd v(12);
  for (int i = 0; i < 12; ++i) v(i) = rng.normal();
  const Eigen::VectorXd exact = problem.partition_gradient(0, v);

  auto decode_with = [&](const std::vector<int>& connected) {
    const FitSelection fit = select_fit_row(scheme.row_supports, connected);
    std::map<int, Eigen::VectorXd> coded;
    for (int w : fit.usable_workers)
      coded[w] = problem.coded_worker_gradient(scheme, 0, 0, w, v);
    return decode_partition_gradient(scheme, fit, coded, 12);
  };

  SECTION("all workers present") {
    CHECK((decode_with({0, 1, 2, 3, 4}) - exact).norm() <= 1e-9 * exact.norm());
  }
  SECTION("every straggler pattern within budget") {
    for (int drop = 0; drop <= 2; ++drop) {
      for (const auto& stragglers : subsets(5, drop)) {
        std::vector<int> connected;
        for (int w = 0; w < 5; ++w)
          if (std::find(stragglers.begin(), stragglers.end(), w) == stragglers.end())
            connected.push_back(w);
        const Eigen::VectorXd est = decode_with(connected);
        INFO("dropped " << drop);
        REQUIRE((est - exact).norm() <= 1e-9 * exact.norm());
      }
    }
  }
  SECTION("empty usable set decodes to zero") {
    const FitSelection fit = select_fit_row(scheme.row_supports, {});
    const Eigen::VectorXd z = decode_partition_gradient(scheme, fit, {}, 12);
    CHECK(z.norm() == 0.0);
  }
  SECTION("dimension mismatch is an error") {
    const FitSelection fit = select_fit_row(scheme.row_supports, {0, 1, 2, 3, 4});
    std::map<int, Eigen::VectorXd> coded;
    for (int w : fit.usable_workers) coded[w] = Eigen::VectorXd::Zero(7);
    CHECK_THROWS_AS(decode_partition_gradient(scheme, fit, coded, 12), std::invalid_argument);
  }
}

TEST_CASE("partial decode matches the expanded correction form") {
  // decode == grad_f(v_i) + sum_{w in fit} A_fit_w * (g_w(used point) - g_w(v_i)),
  // with the used-point term zero for workers outside the connected set.
  const auto problem = generate_least_squares(10, 3, 1, 4, 5);
  const CodingScheme scheme = make_coding_scheme(4, 1, 11);
  BulkSampler rng(123);
  auto random_vec = [&]() {
    Eigen::VectorXd v(10);
    for (int i = 0; i < 10; ++i) v(i) = rng.normal();
    return v;
  };

  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::VectorXd v_i = random_vec();
    EventStream pick(stream_key(77, "subset", static_cast<std::uint64_t>(trial)));
    std::vector<int> connected;
    for (int w = 0; w < 4; ++w)
      if (pick.bernoulli(0.6)) connected.push_back(w);

    const FitSelection fit = select_fit_row(scheme.row_supports, connected);
    std::map<int, Eigen::VectorXd> coded;
    std::map<int, Eigen::VectorXd> points;
    for (int w : fit.usable_workers) {
      points[w] = random_vec();  // arbitrary per-worker evaluation points
      coded[w] = problem.coded_worker_gradient(scheme, 0, 0, w, points[w]);
    }
    const Eigen::VectorXd decoded = decode_partition_gradient(scheme, fit, coded, 10);

    Eigen::VectorXd expanded = problem.partition_gradient(0, v_i);
    for (int w : fit.fit_support) {
      const Eigen::VectorXd g_vi = problem.coded_worker_gradient(scheme, 0, 0, w, v_i);
      const Eigen::VectorXd g_used =
          points.count(w) ? coded.at(w) : Eigen::VectorXd::Zero(10).eval();
      expanded += scheme.A(fit.fit_index, w) * (g_used - g_vi);
    }
    const double scale = std::max(decoded.norm(), 1.0);
    REQUIRE((decoded - expanded).norm() <= 1e-9 * scale);
  }
}

TEST_CASE("matrix debug dump round-trips") {
  const CodingScheme s = make_coding_scheme(4, 1, 3);
  const std::string dir = "codec_dump_test";
  std::filesystem::create_directories(dir);
  write_matrix_csv(s.B, dir + "/B.csv");
  write_matrix_csv(s.A, dir + "/A.csv");
  const Eigen::MatrixXd b2 = read_matrix_csv(dir + "/B.csv");
  const Eigen::MatrixXd a2 = read_matrix_csv(dir + "/A.csv");
  CHECK((b2 - s.B).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a2 - s.A).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove_all(dir);
}
