#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace zicomp {

using Edge = std::pair<std::size_t, std::size_t>;

// Undirected simple graph over spatial units 0..n-1. Edges are stored once
// with i < j, sorted; neighbor lists are symmetric.
class AdjacencyGraph {
 public:
  AdjacencyGraph() = default;
  // Symmetrizes and deduplicates. Throws ValidationError on self-loops or
  // out-of-range indices.
  AdjacencyGraph(std::size_t n, const std::vector<Edge>& edges);

  std::size_t size() const { return n_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::size_t>& neighbors(std::size_t i) const {
    return neighbors_[i];
  }
  std::size_t degree(std::size_t i) const { return neighbors_[i].size(); }
  std::vector<std::size_t> degrees() const;
  bool has_edge(std::size_t i, std::size_t j) const;

  Eigen::MatrixXd adjacency_matrix() const;

  // FNV-1a over (n, edges); used as a basis cache key.
  std::uint64_t hash() const;

  friend bool operator==(const AdjacencyGraph& a, const AdjacencyGraph& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_;
  }

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

struct CarPrecision {
  double rho = 0.0;
  Eigen::MatrixXd Q;
};

// Moran eigenvector basis with its projected prior precision.
struct BasisSet {
  Eigen::MatrixXd B;              // n x q, orthonormal columns, centered
  Eigen::VectorXd eigenvalues;    // q, descending
  Eigen::MatrixXd Q_B;            // q x q, B' Q B
  Eigen::MatrixXd Q_B_chol;       // lower Cholesky factor of Q_B
  double log_det_Q_B = 0.0;
  double rho = 0.0;

  std::size_t n() const { return static_cast<std::size_t>(B.rows()); }
  std::size_t q() const { return static_cast<std::size_t>(B.cols()); }

  // Leading `q` columns as a new basis (nested truth/fit bases share vectors).
  BasisSet leading(std::size_t q) const;
};

// Rook-adjacency lattice; node index is r * cols + c.
AdjacencyGraph build_lattice(std::size_t rows, std::size_t cols);

// Text format: a header line "n <count>", then one "i j" edge per line.
// '#' starts a comment. Blank lines are ignored.
AdjacencyGraph load_graph(std::istream& in);
AdjacencyGraph load_graph(const std::filesystem::path& path);
void write_graph(std::ostream& out, const AdjacencyGraph& g);

CarPrecision car_precision(const AdjacencyGraph& g, double rho);

// F = (I - 11'/n) A (I - 11'/n).
Eigen::MatrixXd moran_operator(const AdjacencyGraph& g);

// Eigenvectors of F for the q algebraically largest eigenvalues.
BasisSet compute_basis(const Eigen::MatrixXd& F, const CarPrecision& Q,
                       std::size_t q);

// Convenience: lattice/graph -> basis with the given rho and q.
BasisSet build_basis(const AdjacencyGraph& g, double rho, std::size_t q);

// Basis export for reuse across runs. The text format stores every value at
// round-trip precision.
void write_basis(std::ostream& out, const BasisSet& basis, std::uint64_t graph_hash);
BasisSet read_basis(std::istream& in, std::uint64_t* graph_hash = nullptr);

std::string basis_cache_key(std::uint64_t graph_hash, double rho, std::size_t q);

// Loads <dir>/<key>.basis when present, otherwise computes and stores it.
BasisSet load_or_compute_basis(const std::filesystem::path& cache_dir,
                               const AdjacencyGraph& g, double rho, std::size_t q);

}  // namespace zicomp
