#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "zicomp/comp_dist.hpp"
#include "zicomp/graph_basis.hpp"
#include "zicomp/mcmc.hpp"
#include "zicomp/model.hpp"

namespace zicomp {

inline constexpr std::size_t kMinMcseLength = 100;

struct Mcse {
  double mcse = 0.0;
  std::size_t batches = 0;
};

// Batch size floor(sqrt(N)); MCSE = sd(batch means) / sqrt(batch count).
// Trailing draws that do not fill a batch are dropped.
Mcse batch_means_mcse(const std::vector<double>& trace);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

// Shortest window of ceil(level * N) consecutive order statistics.
Interval hpd_interval(std::vector<double> samples, double level = 0.95);
Interval equal_tailed_interval(std::vector<double> samples, double level = 0.95);
double median(std::vector<double> samples);

struct Inclusion {
  double probability = 0.0;
  double mcse = 0.0;  // NaN when the trace is too short for batch means
};
std::vector<Inclusion> inclusion_probabilities(const std::vector<std::vector<double>>& traces);

struct SummaryRow {
  std::string name;
  double median = 0.0;
  double hpd_lo = 0.0;
  double hpd_hi = 0.0;
  double mcse = 0.0;
  std::size_t batches = 0;
};
using SummaryTable = std::vector<SummaryRow>;

SummaryTable summarize(const ChainOutput& chain, double level = 0.95);

// Column-wise posterior median of the recorded draws.
ModelState posterior_median_state(const ChainOutput& chain);

// ZICOMP distribution pieces at one cell: F(y - 1) and f(y).
struct CellCdf {
  double cdf_below = 0.0;
  double pmf = 0.0;
};
CellCdf zicomp_cdf_pmf(std::int64_t y, double pi, double eta, double nu,
                       double tol = kDefaultNormalizerTol);

struct RqrSet {
  std::vector<double> residual;  // per cell, NaN for missing cells
  std::uint64_t seed = 0;
  std::size_t infinite = 0;
  std::size_t finite() const;
};

// Φ⁻¹(F(y − 1) + U f(y)) per observed cell with U from a per-cell stream.
// A uniform that rounds to 1 (or 0) gives +inf (or −inf).
double rqr_value(const CellCdf& cell, double u);
RqrSet rqr(const Dataset& data, const Predictors& fit, std::uint64_t seed,
           double tol = kDefaultNormalizerTol, int threads = 1);

struct PredictiveMean {
  std::vector<double> mean;      // per cell
  std::vector<double> mc_error;  // per cell, sd / sqrt(draws)
};

// Simulates one response per cell for each retained draw, cycling through
// the draws until `draws` responses have been produced per cell.
PredictiveMean posterior_predictive_mean(const ChainOutput& chain, const Dataset& data,
                                         const BasisSet& basis, std::size_t draws,
                                         std::uint64_t seed, int threads = 1);

// Anderson–Darling against a fully specified N(0, 1).
double anderson_darling_normal(std::vector<double> sample);
// Asymptotic p-value with the finite-sample correction of Marsaglia & Marsaglia.
double anderson_darling_pvalue(double a2, std::size_t n);

// Two-sample Kolmogorov–Smirnov distance sup |F_a − F_b|.
double ks_distance(std::vector<double> a, std::vector<double> b);

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

void write_summary_csv(std::ostream& out, const SummaryTable& table, double level);
void write_inclusion_csv(std::ostream& out, const ChainOutput& chain);
void write_rqr_csv(std::ostream& out, const Dataset& data, const RqrSet& rqr);
void write_predictive_csv(std::ostream& out, const Dataset& data, const PredictiveMean& pm);
void write_samples_csv(std::ostream& out, const ChainOutput& chain);
ChainOutput read_samples_csv(std::istream& in);

// Column documentation for every table above.
std::string output_schema();

}  // namespace zicomp
