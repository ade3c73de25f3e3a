#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "zicomp/errors.hpp"
#include "zicomp/graph_basis.hpp"

using namespace zicomp;

namespace {

// Cyclic Jacobi eigenvalue iteration for a symmetric matrix; columns of V
// are the eigenvectors, sorted by descending eigenvalue.
void jacobi_eigen(Eigen::MatrixXd A, Eigen::VectorXd& vals, Eigen::MatrixXd& V) {
  const Eigen::Index n = A.rows();
  V = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-26) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(A(p, q)) < 1e-300) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return A(a, a) > A(b, b); });
  vals.resize(n);
  Eigen::MatrixXd Vs(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    vals(k) = A(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(k)]);
    Vs.col(k) = V.col(idx[static_cast<std::size_t>(k)]);
  }
  V = Vs;
}

}  // namespace

TEST_CASE("lattice adjacency") {
  const auto g = build_lattice(3, 3);
  CHECK(g.size() == 9);
  CHECK(g.edges().size() == 12);
  CHECK(g.degree(4) == 4);
  CHECK(g.degree(0) == 2);
  CHECK(g.has_edge(0, 1));
  CHECK(g.has_edge(1, 0));
  CHECK_FALSE(g.has_edge(0, 4));
  CHECK(g.adjacency_matrix().sum() == 24.0);
  CHECK_THROWS_AS(build_lattice(0, 3), ValidationError);
}

TEST_CASE("graph construction validates edges") {
  CHECK_THROWS_AS(AdjacencyGraph(3, {{0, 0}}), ValidationError);
  CHECK_THROWS_AS(AdjacencyGraph(3, {{0, 3}}), ValidationError);
  const AdjacencyGraph g(3, {{1, 0}, {0, 1}, {2, 1}});
  CHECK(g.edges().size() == 2);
  CHECK(g == AdjacencyGraph(3, {{0, 1}, {1, 2}}));
}

TEST_CASE("graph file parsing") {
  std::istringstream ok("# comment\nn 4\n0 1\n\n1 2 # trailing\n2 3\n");
  const auto g = load_graph(ok);
  CHECK(g.size() == 4);
  CHECK(g.edges().size() == 3);

  std::istringstream bad("n 4\n0 1\n1 x\n");
  try {
    load_graph(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream loop("n 4\n2 2\n");
  CHECK_THROWS_AS(load_graph(loop), ValidationError);
  std::istringstream range("n 2\n0 5\n");
  CHECK_THROWS_AS(load_graph(range), ParseError);
  std::istringstream nohdr("0 1\n");
  CHECK_THROWS_AS(load_graph(nohdr), ParseError);

  std::ostringstream out;
  write_graph(out, g);
  std::istringstream back(out.str());
  CHECK(load_graph(back) == g);
}

TEST_CASE("CAR precision") {
  const auto g = build_lattice(2, 3);
  const auto car = car_precision(g, 0.99);
  const Eigen::MatrixXd A = g.adjacency_matrix();
  Eigen::MatrixXd want = -0.99 * A;
  for (Eigen::Index i = 0; i < 6; ++i) want(i, i) = A.row(i).sum();
  CHECK((car.Q - want).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(car_precision(g, 1.0), ValidationError);
  CHECK_THROWS_AS(car_precision(g, -0.1), ValidationError);
}

TEST_CASE("Moran operator equals PAP") {
  const auto g = build_lattice(3, 4);
  const Eigen::Index n = 12;
  const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  const Eigen::MatrixXd want = P * g.adjacency_matrix() * P;
  CHECK((moran_operator(g) - want).cwiseAbs().maxCoeff() < 1e-13);
  CHECK_THROWS_AS(moran_operator(AdjacencyGraph(1, {})), ValidationError);
}

TEST_CASE("basis matches an independent Jacobi eigensolver") {
  const auto g = build_lattice(3, 5);
  const Eigen::MatrixXd F = moran_operator(g);
  Eigen::VectorXd vals;
  Eigen::MatrixXd V;
  jacobi_eigen(F, vals, V);
  for (std::size_t q : {1u, 3u, 5u}) {
    CAPTURE(q);
    // Only compare at spectral gaps so the subspace is well defined.
    REQUIRE(vals(static_cast<Eigen::Index>(q) - 1) - vals(static_cast<Eigen::Index>(q)) > 1e-6);
    const auto b = build_basis(g, 0.99, q);
    for (std::size_t k = 0; k < q; ++k) {
      CHECK(b.eigenvalues(static_cast<Eigen::Index>(k)) ==
            doctest::Approx(vals(static_cast<Eigen::Index>(k))).epsilon(1e-10));
    }
    const auto qi = static_cast<Eigen::Index>(q);
    const Eigen::MatrixXd P1 = b.B * b.B.transpose();
    const Eigen::MatrixXd P2 = V.leftCols(qi) * V.leftCols(qi).transpose();
    CHECK((P1 - P2).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("basis structure") {
  const auto g = build_lattice(4, 4);
  const auto b = build_basis(g, 0.99, 6);
  CHECK(b.n() == 16);
  CHECK(b.q() == 6);
  const Eigen::MatrixXd I = b.B.transpose() * b.B;
  CHECK((I - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((b.B.transpose() * Eigen::VectorXd::Ones(16)).cwiseAbs().maxCoeff() < 1e-12);
  for (Eigen::Index k = 1; k < 6; ++k) CHECK(b.eigenvalues(k - 1) >= b.eigenvalues(k));
  // Sign convention: the first entry of largest magnitude (ties within
  // roundoff) is positive.
  for (Eigen::Index k = 0; k < 6; ++k) {
    const double top = b.B.col(k).cwiseAbs().maxCoeff();
    Eigen::Index arg = 0;
    while (std::abs(b.B(arg, k)) < top - 1e-9) ++arg;
    CHECK(b.B(arg, k) > 0.0);
  }
  const Eigen::MatrixXd QB = b.B.transpose() * car_precision(g, 0.99).Q * b.B;
  CHECK((b.Q_B - QB).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd L = b.Q_B_chol;
  CHECK((L * L.transpose() - b.Q_B).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(b.log_det_Q_B == doctest::Approx(std::log(QB.determinant())).epsilon(1e-10));
  // Determinism.
  const auto b2 = build_basis(g, 0.99, 6);
  CHECK(b2.B == b.B);
  CHECK_THROWS_AS(build_basis(g, 0.99, 0), ValidationError);
  CHECK_THROWS_AS(build_basis(g, 0.99, 16), ValidationError);
}

TEST_CASE("leading columns form a nested basis") {
  const auto g = build_lattice(4, 5);
  const auto big = build_basis(g, 0.99, 8);
  const auto small = big.leading(3);
  CHECK(small.B == big.B.leftCols(3));
  CHECK((small.Q_B - big.Q_B.topLeftCorner(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("basis export round trip and cache") {
  const auto g = build_lattice(3, 3);
  const auto b = build_basis(g, 0.9, 4);
  std::stringstream ss;
  write_basis(ss, b, g.hash());
  std::uint64_t h = 0;
  const auto back = read_basis(ss, &h);
  CHECK(h == g.hash());
  CHECK(back.B == b.B);
  CHECK(back.Q_B == b.Q_B);
  CHECK(back.eigenvalues == b.eigenvalues);
  CHECK(back.rho == b.rho);

  const auto dir = std::filesystem::temp_directory_path() / "zicomp_basis_cache_test";
  std::filesystem::remove_all(dir);
  const auto c1 = load_or_compute_basis(dir, g, 0.9, 4);
  CHECK(std::filesystem::exists(dir / (basis_cache_key(g.hash(), 0.9, 4) + ".basis")));
  const auto c2 = load_or_compute_basis(dir, g, 0.9, 4);
  CHECK(c1.B == c2.B);
  CHECK(basis_cache_key(g.hash(), 0.9, 4) != basis_cache_key(g.hash(), 0.9, 5));
  std::filesystem::remove_all(dir);
}
