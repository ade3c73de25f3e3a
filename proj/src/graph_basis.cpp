#include "zicomp/graph_basis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "zicomp/errors.hpp"

namespace zicomp {

AdjacencyGraph::AdjacencyGraph(std::size_t n, const std::vector<Edge>& edges)
    : n_(n), neighbors_(n) {
  edges_.reserve(edges.size());
  for (auto [i, j] : edges) {
    if (i >= n || j >= n) {
      throw ValidationError("edge (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") out of range for n = " + std::to_string(n));
    }
    if (i == j) {
      throw ValidationError("self-loop at node " + std::to_string(i));
    }
    edges_.emplace_back(std::min(i, j), std::max(i, j));
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  for (auto [i, j] : edges_) {
    neighbors_[i].push_back(j);
    neighbors_[j].push_back(i);
  }
  for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());
}

std::vector<std::size_t> AdjacencyGraph::degrees() const {
  std::vector<std::size_t> d(n_);
  for (std::size_t i = 0; i < n_; ++i) d[i] = neighbors_[i].size();
  return d;
}

bool AdjacencyGraph::has_edge(std::size_t i, std::size_t j) const {
  if (i >= n_ || j >= n_) return false;
  const auto& nb = neighbors_[i];
  return std::binary_search(nb.begin(), nb.end(), j);
}

Eigen::MatrixXd AdjacencyGraph::adjacency_matrix() const {
  const auto n = static_cast<Eigen::Index>(n_);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (auto [i, j] : edges_) {
    A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
    A(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = 1.0;
  }
  return A;
}

std::uint64_t AdjacencyGraph::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(n_);
  for (auto [i, j] : edges_) {
    mix(i);
    mix(j);
  }
  return h;
}

AdjacencyGraph build_lattice(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ValidationError("lattice dimensions must be positive");
  }
  if (rows > std::numeric_limits<std::size_t>::max() / cols) {
    throw ValidationError("lattice size rows * cols overflows");
  }
  std::vector<Edge> edges;
  edges.reserve(2 * rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (c + 1 < cols) edges.emplace_back(i, i + 1);
      if (r + 1 < rows) edges.emplace_back(i, i + cols);
    }
  }
  return AdjacencyGraph(rows * cols, edges);
}

AdjacencyGraph load_graph(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t n = 0;
  bool have_n = false;
  std::vector<Edge> edges;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (!have_n) {
      long long count = -1;
      std::string extra;
      if (first != "n" || !(ls >> count) || count < 0 || (ls >> extra)) {
        throw ParseError("expected header 'n <count>'", line_no);
      }
      n = static_cast<std::size_t>(count);
      have_n = true;
      continue;
    }
    long long i = -1, j = -1;
    std::string extra;
    std::istringstream es(line);
    if (!(es >> i >> j) || (es >> extra)) {
      throw ParseError("expected edge 'i j'", line_no);
    }
    if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= n ||
        static_cast<std::size_t>(j) >= n) {
      throw ParseError("edge index out of range [0, " + std::to_string(n) + ")", line_no);
    }
    if (i == j) {
      throw ValidationError("line " + std::to_string(line_no) + ": self-loop at node " +
                            std::to_string(i));
    }
    edges.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  if (!have_n) throw ParseError("missing header 'n <count>'", 0);
  return AdjacencyGraph(n, edges);
}

AdjacencyGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open graph file " + path.string(), 0);
  return load_graph(in);
}

void write_graph(std::ostream& out, const AdjacencyGraph& g) {
  out << "# zicomp graph v1\n";
  out << "n " << g.size() << "\n";
  for (auto [i, j] : g.edges()) out << i << " " << j << "\n";
}

CarPrecision car_precision(const AdjacencyGraph& g, double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw ValidationError("rho must lie in [0, 1), got " + std::to_string(rho));
  }
  CarPrecision out;
  out.rho = rho;
  const auto n = static_cast<Eigen::Index>(g.size());
  out.Q = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
        static_cast<double>(g.degree(i));
  }
  for (auto [i, j] : g.edges()) {
    out.Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = -rho;
    out.Q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = -rho;
  }
  return out;
}

Eigen::MatrixXd moran_operator(const AdjacencyGraph& g) {
  if (g.size() < 2) throw ValidationError("Moran operator needs n >= 2");
  const auto n = static_cast<Eigen::Index>(g.size());
  const double dn = static_cast<double>(n);
  const Eigen::MatrixXd A = g.adjacency_matrix();
  // PAP expanded: A - r1'/n - 1r'/n + (s/n^2) 11', r = A1, s = 1'A1.
  const Eigen::VectorXd r = A.rowwise().sum();
  const double s = r.sum();
  Eigen::MatrixXd F = A;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      F(i, j) += -r(i) / dn - r(j) / dn + s / (dn * dn);
    }
  }
  return F;
}

namespace {

void finish_basis(BasisSet& b, const Eigen::MatrixXd& Q) {
  b.Q_B = b.B.transpose() * Q * b.B;
  b.Q_B = 0.5 * (b.Q_B + b.Q_B.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(b.Q_B);
  if (llt.info() != Eigen::Success) {
    throw NumericError("projected precision Q_B is not positive definite");
  }
  b.Q_B_chol = llt.matrixL();
  b.log_det_Q_B = 2.0 * b.Q_B_chol.diagonal().array().log().sum();
}

}  // namespace

BasisSet compute_basis(const Eigen::MatrixXd& F, const CarPrecision& Q, std::size_t q) {
  const auto n = F.rows();
  if (F.cols() != n || Q.Q.rows() != n || Q.Q.cols() != n) {
    throw ValidationError("compute_basis: dimension mismatch");
  }
  if (q < 1 || q >= static_cast<std::size_t>(n)) {
    throw ValidationError("compute_basis: need 1 <= q < n, got q = " + std::to_string(q));
  }
  // F annihilates 1. Shifting the constant direction far below the spectrum
  // (|lambda(F)| <= max row sum of |F|) keeps it out of the retained set even
  // when the graph has fewer attractive patterns than q.
  const double dn = static_cast<double>(n);
  const double shift = 1.0 + 2.0 * F.cwiseAbs().rowwise().sum().maxCoeff();
  Eigen::MatrixXd Fs = F;
  Fs.array() -= shift / dn;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Fs);
  if (es.info() != Eigen::Success) {
    throw NumericError("eigendecomposition of the Moran operator failed");
  }
  BasisSet b;
  b.rho = Q.rho;
  const auto qi = static_cast<Eigen::Index>(q);
  b.B.resize(n, qi);
  b.eigenvalues.resize(qi);
  // Solver returns ascending order; take from the top.
  for (Eigen::Index k = 0; k < qi; ++k) {
    const Eigen::Index src = n - 1 - k;
    Eigen::VectorXd v = es.eigenvectors().col(src);
    // Deterministic sign: the first entry of maximal magnitude is positive.
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(v(i)) > best + 1e-12) {
        best = std::abs(v(i));
        arg = i;
      }
    }
    if (v(arg) < 0) v = -v;
    b.B.col(k) = v;
    b.eigenvalues(k) = es.eigenvalues()(src);
  }
  finish_basis(b, Q.Q);
  return b;
}

BasisSet build_basis(const AdjacencyGraph& g, double rho, std::size_t q) {
  return compute_basis(moran_operator(g), car_precision(g, rho), q);
}

BasisSet BasisSet::leading(std::size_t qn) const {
  if (qn < 1 || qn > q()) throw ValidationError("leading: q out of range");
  BasisSet out;
  const auto k = static_cast<Eigen::Index>(qn);
  out.B = B.leftCols(k);
  out.eigenvalues = eigenvalues.head(k);
  out.Q_B = Q_B.topLeftCorner(k, k);
  Eigen::LLT<Eigen::MatrixXd> llt(out.Q_B);
  if (llt.info() != Eigen::Success) {
    throw NumericError("projected precision Q_B is not positive definite");
  }
  out.Q_B_chol = llt.matrixL();
  out.log_det_Q_B = 2.0 * out.Q_B_chol.diagonal().array().log().sum();
  out.rho = rho;
  return out;
}

void write_basis(std::ostream& out, const BasisSet& b, std::uint64_t graph_hash) {
  out << "zicomp-basis 1\n";
  out << graph_hash << " " << std::setprecision(17) << b.rho << " " << b.n() << " "
      << b.q() << "\n";
  out << std::setprecision(17);
  for (Eigen::Index k = 0; k < b.eigenvalues.size(); ++k) out << b.eigenvalues(k) << "\n";
  for (Eigen::Index i = 0; i < b.B.rows(); ++i) {
    for (Eigen::Index k = 0; k < b.B.cols(); ++k) {
      out << b.B(i, k) << (k + 1 < b.B.cols() ? " " : "\n");
    }
  }
  for (Eigen::Index i = 0; i < b.Q_B.rows(); ++i) {
    for (Eigen::Index k = 0; k < b.Q_B.cols(); ++k) {
      out << b.Q_B(i, k) << (k + 1 < b.Q_B.cols() ? " " : "\n");
    }
  }
}

BasisSet read_basis(std::istream& in, std::uint64_t* graph_hash) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "zicomp-basis" || version != 1) {
    throw ParseError("not a zicomp basis file (version 1)", 1);
  }
  std::uint64_t h = 0;
  std::size_t n = 0, q = 0;
  BasisSet b;
  if (!(in >> h >> b.rho >> n >> q) || q == 0 || q >= n) {
    throw ParseError("bad basis header", 2);
  }
  const auto ni = static_cast<Eigen::Index>(n), qi = static_cast<Eigen::Index>(q);
  b.eigenvalues.resize(qi);
  b.B.resize(ni, qi);
  b.Q_B.resize(qi, qi);
  for (Eigen::Index k = 0; k < qi; ++k) in >> b.eigenvalues(k);
  for (Eigen::Index i = 0; i < ni; ++i)
    for (Eigen::Index k = 0; k < qi; ++k) in >> b.B(i, k);
  for (Eigen::Index i = 0; i < qi; ++i)
    for (Eigen::Index k = 0; k < qi; ++k) in >> b.Q_B(i, k);
  if (!in) throw ParseError("truncated basis file", 0);
  Eigen::LLT<Eigen::MatrixXd> llt(b.Q_B);
  if (llt.info() != Eigen::Success) throw NumericError("stored Q_B not positive definite");
  b.Q_B_chol = llt.matrixL();
  b.log_det_Q_B = 2.0 * b.Q_B_chol.diagonal().array().log().sum();
  if (graph_hash) *graph_hash = h;
  return b;
}

std::string basis_cache_key(std::uint64_t graph_hash, double rho, std::size_t q) {
  std::ostringstream os;
  os << std::hex << graph_hash << std::dec << "_rho" << std::setprecision(17) << rho
     << "_q" << q;
  return os.str();
}

BasisSet load_or_compute_basis(const std::filesystem::path& cache_dir,
                               const AdjacencyGraph& g, double rho, std::size_t q) {
  const auto path = cache_dir / (basis_cache_key(g.hash(), rho, q) + ".basis");
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::uint64_t h = 0;
    BasisSet b = read_basis(in, &h);
    if (h == g.hash() && b.q() == q && b.n() == g.size() && b.rho == rho) return b;
  }
  BasisSet b = build_basis(g, rho, q);
  std::filesystem::create_directories(cache_dir);
  std::ofstream out(path);
  if (out) write_basis(out, b, g.hash());
  return b;
}

}  // namespace zicomp
