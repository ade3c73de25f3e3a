#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "zicomp/graph_basis.hpp"
#include "zicomp/rng.hpp"

namespace zicomp {

inline constexpr std::int64_t kMissing = -1;
inline constexpr int kMonthDummies = 11;

// Counts y_st over n locations and T periods, cell index c = s * T + t.
struct Dataset {
  std::size_t n = 0;
  std::size_t T = 0;
  std::vector<std::int64_t> y;   // n*T, kMissing for absent cells
  Eigen::MatrixXd X;             // (n*T) x p, first column is the intercept
  Eigen::MatrixXd M;             // T x 11 month dummies
  AdjacencyGraph graph;

  std::size_t cells() const { return n * T; }
  std::size_t p() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t cell(std::size_t s, std::size_t t) const { return s * T + t; }
  std::size_t location(std::size_t c) const { return c / T; }
  std::size_t period(std::size_t c) const { return c % T; }
  bool missing(std::size_t c) const { return y[c] == kMissing; }

  // Throws ValidationError on any violated invariant.
  void validate() const;
};

// Month dummies for periods 0..T-1; month = (period + first_month) mod 12,
// one column per non-reference month in calendar order.
Eigen::MatrixXd month_dummies(std::size_t T, int reference_month = 0, int first_month = 0);

struct ModelState {
  std::vector<std::uint8_t> w;  // per cell
  Eigen::VectorXd beta1;
  Eigen::VectorXd beta2;
  Eigen::VectorXd zeta;         // 11
  double alpha = 0.0;
  Eigen::VectorXd gamma;        // q
  Eigen::VectorXd delta;        // q
  std::vector<std::uint8_t> I_gamma;
  std::vector<std::uint8_t> I_delta;
  double kappa = 1.0;
  double tau = 1.0;

  // Zero coefficients, unit smoothing, all indicators on, w = 1 everywhere.
  static ModelState zeros(std::size_t cells, std::size_t p, std::size_t q);

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

Eigen::VectorXd masked(const Eigen::VectorXd& v, const std::vector<std::uint8_t>& mask);

struct PriorConfig {
  double fixed_effect_variance = 100.0;
  double smoothing_shape = 0.001;
  double smoothing_rate = 1000.0;
  double indicator_inclusion = 0.1;
  double w_prior = 0.5;

  void validate() const;
};

// Linear-predictor components kept separately so a single block change only
// recomputes its own term. log_eta and log_nu are always rebuilt by the same
// summation order, so patched and fresh caches agree exactly.
class Predictors {
 public:
  Predictors() = default;
  Predictors(const ModelState& state, const Dataset& data, const BasisSet& basis);

  void set_beta1(const Eigen::VectorXd& beta1, const Dataset& data);
  void set_beta2(const Eigen::VectorXd& beta2, const Dataset& data);
  void set_zeta(const Eigen::VectorXd& zeta, const Dataset& data);
  void set_gamma(const Eigen::VectorXd& gamma_masked, const BasisSet& basis);
  void set_alpha(double alpha);
  void set_delta(const Eigen::VectorXd& delta_masked, const BasisSet& basis);

  std::size_t cells() const { return static_cast<std::size_t>(logit_pi_.size()); }
  double logit_pi(std::size_t c) const { return logit_pi_(static_cast<Eigen::Index>(c)); }
  double pi(std::size_t c) const;
  double log_pi(std::size_t c) const;
  double log1m_pi(std::size_t c) const;
  double log_eta(std::size_t c) const { return log_eta_(static_cast<Eigen::Index>(c)); }
  double eta(std::size_t c) const { return std::exp(log_eta(c)); }
  double log_nu_loc(std::size_t s) const { return log_nu_(static_cast<Eigen::Index>(s)); }
  double nu_loc(std::size_t s) const { return std::exp(log_nu_loc(s)); }
  double nu(std::size_t c) const { return nu_loc(c / T_); }
  double log_nu(std::size_t c) const { return log_nu_loc(c / T_); }

  const Eigen::VectorXd& log_eta_vector() const { return log_eta_; }
  const Eigen::VectorXd& log_nu_vector() const { return log_nu_; }

 private:
  void rebuild_eta();
  void rebuild_nu();

  std::size_t n_ = 0;
  std::size_t T_ = 1;
  Eigen::VectorXd logit_pi_;   // X beta1
  Eigen::VectorXd xb2_;        // X beta2
  Eigen::VectorXd bg_;         // B (gamma ⊙ I_gamma), per location
  Eigen::VectorXd mz_;         // M zeta, per period
  double alpha_ = 0.0;
  Eigen::VectorXd bd_;         // B (delta ⊙ I_delta)
  Eigen::VectorXd log_eta_;
  Eigen::VectorXd log_nu_;
};

Predictors compute_predictors(const ModelState& state, const Dataset& data,
                              const BasisSet& basis);

// Σ ν_s w_st (y_st log η_st − log y_st!) over observed cells.
double log_unnorm_likelihood(const ModelState& state, const Dataset& data,
                             const Predictors& pred);
double log_unnorm_likelihood(const ModelState& state, const Dataset& data,
                             const BasisSet& basis);

// Σ (1 − w) log(1 − π) + w log π over observed cells.
double log_binary_likelihood(const ModelState& state, const Dataset& data,
                             const Predictors& pred);
double log_binary_likelihood(const ModelState& state, const Dataset& data,
                             const BasisSet& basis);

// Exact ZICOMP log-likelihood of (y, w), using the truncated normalizer.
double log_complete_likelihood(const ModelState& state, const Dataset& data,
                               const Predictors& pred, double tol = 1e-12);

// Prior pieces, reused by the block updates.
double log_normal_iid(const Eigen::VectorXd& v, double variance);
// log N_q(v; 0, Q_B^{-1} / precision)
double log_basis_prior(const Eigen::VectorXd& v, double precision, const BasisSet& basis);
double quad_form_Q_B(const Eigen::VectorXd& v, const BasisSet& basis);
double log_gamma_density(double x, double shape, double rate);
double log_indicator_prior(const std::vector<std::uint8_t>& ind, double inclusion);

double log_priors(const ModelState& state, const Dataset& data, const BasisSet& basis,
                  const PriorConfig& cfg);

struct SimulatedCounts {
  std::vector<std::int64_t> y;
  std::vector<std::uint8_t> w;
};

// w_st ~ Bernoulli(π_st), y_st = 0 if w_st = 0 else COMP(η_st, ν_s). Each cell
// draws from its own stream derived from `seed`, so the output does not
// depend on the thread count. Missing cells in the template stay missing.
SimulatedCounts simulate_dataset(const ModelState& state, const Dataset& data_template,
                                 const BasisSet& basis, std::uint64_t seed,
                                 int threads = 1);
SimulatedCounts simulate_dataset(const ModelState& state, const Dataset& data_template,
                                 const BasisSet& basis, Rng& rng, int threads = 1);

// Auxiliary counts z_st ~ COMP(η'_st, ν'_s) on observed cells with w_st = 1;
// every other cell holds kMissing. Throws NumericError naming the cell when
// the sampler fails.
std::vector<std::int64_t> simulate_auxiliary(const std::vector<std::uint8_t>& w,
                                             const Dataset& data, const Predictors& proposed,
                                             std::uint64_t seed, int threads = 1);

// ν ≡ 1 view of a state: α = 0, δ = 0, I_δ = 0.
ModelState zip_mode(const ModelState& state);

}  // namespace zicomp
