#include "zicomp/model.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "zicomp/comp_dist.hpp"
#include "zicomp/errors.hpp"

namespace zicomp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class F>
void for_cells(std::size_t count, int threads, F&& f) {
#if defined(_OPENMP)
  if (threads > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(count); ++c) {
      f(static_cast<std::size_t>(c));
    }
    return;
  }
#else
  (void)threads;
#endif
  for (std::size_t c = 0; c < count; ++c) f(c);
}

}  // namespace

void Dataset::validate() const {
  if (y.size() != n * T) throw ValidationError("dataset: y must have n*T entries");
  if (static_cast<std::size_t>(X.rows()) != n * T || X.cols() < 1) {
    throw ValidationError("dataset: X must be (n*T) x p with p >= 1");
  }
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    if (X(r, 0) != 1.0) throw ValidationError("dataset: first column of X must be the intercept");
  }
  if (static_cast<std::size_t>(M.rows()) != T || M.cols() != kMonthDummies) {
    throw ValidationError("dataset: M must be T x 11");
  }
  for (Eigen::Index t = 0; t < M.rows(); ++t) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < M.cols(); ++k) {
      if (M(t, k) != 0.0 && M(t, k) != 1.0) throw ValidationError("dataset: M must be 0/1");
      s += M(t, k);
    }
    if (s > 1.0) throw ValidationError("dataset: a month dummy row has more than one 1");
  }
  for (auto v : y) {
    if (v < 0 && v != kMissing) throw ValidationError("dataset: negative count");
  }
  if (graph.size() != n) throw ValidationError("dataset: graph size differs from n");
}

Eigen::MatrixXd month_dummies(std::size_t T, int reference_month, int first_month) {
  if (reference_month < 0 || reference_month > 11 || first_month < 0 || first_month > 11) {
    throw ValidationError("months are indexed 0..11");
  }
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), kMonthDummies);
  for (std::size_t t = 0; t < T; ++t) {
    const int month = static_cast<int>((t + static_cast<std::size_t>(first_month)) % 12);
    if (month == reference_month) continue;
    const int col = month < reference_month ? month : month - 1;
    M(static_cast<Eigen::Index>(t), col) = 1.0;
  }
  return M;
}

ModelState ModelState::zeros(std::size_t cells, std::size_t p, std::size_t q) {
  ModelState s;
  s.w.assign(cells, 1);
  s.beta1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  s.beta2 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  s.zeta = Eigen::VectorXd::Zero(kMonthDummies);
  s.gamma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
  s.delta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
  s.I_gamma.assign(q, 1);
  s.I_delta.assign(q, 1);
  return s;
}

Eigen::VectorXd masked(const Eigen::VectorXd& v, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != static_cast<std::size_t>(v.size())) {
    throw ValidationError("indicator length differs from coefficient length");
  }
  Eigen::VectorXd out(v.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    out(j) = mask[static_cast<std::size_t>(j)] ? v(j) : 0.0;
  }
  return out;
}

void PriorConfig::validate() const {
  if (!(fixed_effect_variance > 0) || !(smoothing_shape > 0) || !(smoothing_rate > 0)) {
    throw ValidationError("prior variances and gamma hyperparameters must be positive");
  }
  if (!(indicator_inclusion > 0 && indicator_inclusion < 1) || !(w_prior > 0 && w_prior < 1)) {
    throw ValidationError("prior probabilities must lie in (0, 1)");
  }
}

// ---------------------------------------------------------------------------
// Predictors

Predictors::Predictors(const ModelState& s, const Dataset& data, const BasisSet& basis)
    : n_(data.n), T_(data.T) {
  const auto p = static_cast<Eigen::Index>(data.p());
  const auto q = static_cast<Eigen::Index>(basis.q());
  if (s.beta1.size() != p || s.beta2.size() != p) {
    throw ValidationError("predictors: beta length differs from covariate count");
  }
  if (s.zeta.size() != kMonthDummies) throw ValidationError("predictors: zeta must have 11 entries");
  if (s.gamma.size() != q || s.delta.size() != q) {
    throw ValidationError("predictors: basis coefficient length differs from q");
  }
  if (basis.n() != data.n) throw ValidationError("predictors: basis rows differ from n");
  if (s.w.size() != data.cells()) throw ValidationError("predictors: w has wrong length");
  logit_pi_ = data.X * s.beta1;
  xb2_ = data.X * s.beta2;
  bg_ = basis.B * masked(s.gamma, s.I_gamma);
  mz_ = data.M * s.zeta;
  alpha_ = s.alpha;
  bd_ = basis.B * masked(s.delta, s.I_delta);
  rebuild_eta();
  rebuild_nu();
}

void Predictors::rebuild_eta() {
  log_eta_.resize(xb2_.size());
  for (std::size_t s = 0; s < n_; ++s) {
    for (std::size_t t = 0; t < T_; ++t) {
      const auto c = static_cast<Eigen::Index>(s * T_ + t);
      log_eta_(c) = xb2_(c) + bg_(static_cast<Eigen::Index>(s)) +
                    mz_(static_cast<Eigen::Index>(t));
    }
  }
}

void Predictors::rebuild_nu() { log_nu_ = (alpha_ + bd_.array()).matrix(); }

void Predictors::set_beta1(const Eigen::VectorXd& beta1, const Dataset& data) {
  logit_pi_ = data.X * beta1;
}
void Predictors::set_beta2(const Eigen::VectorXd& beta2, const Dataset& data) {
  xb2_ = data.X * beta2;
  rebuild_eta();
}
void Predictors::set_zeta(const Eigen::VectorXd& zeta, const Dataset& data) {
  mz_ = data.M * zeta;
  rebuild_eta();
}
void Predictors::set_gamma(const Eigen::VectorXd& gamma_masked, const BasisSet& basis) {
  bg_ = basis.B * gamma_masked;
  rebuild_eta();
}
void Predictors::set_alpha(double alpha) {
  alpha_ = alpha;
  rebuild_nu();
}
void Predictors::set_delta(const Eigen::VectorXd& delta_masked, const BasisSet& basis) {
  bd_ = basis.B * delta_masked;
  rebuild_nu();
}

double Predictors::pi(std::size_t c) const { return 1.0 / (1.0 + std::exp(-logit_pi(c))); }
double Predictors::log_pi(std::size_t c) const { return -log1p_exp(-logit_pi(c)); }
double Predictors::log1m_pi(std::size_t c) const { return -log1p_exp(logit_pi(c)); }

Predictors compute_predictors(const ModelState& state, const Dataset& data,
                              const BasisSet& basis) {
  return Predictors(state, data, basis);
}

// ---------------------------------------------------------------------------
// Likelihood pieces

double log_unnorm_likelihood(const ModelState& state, const Dataset& data,
                             const Predictors& pred) {
  double out = 0.0;
  for (std::size_t c = 0; c < data.cells(); ++c) {
    if (data.missing(c) || !state.w[c] || data.y[c] == 0) continue;
    const double y = static_cast<double>(data.y[c]);
    out += pred.nu(c) * (y * pred.log_eta(c) - std::lgamma(y + 1.0));
  }
  return out;
}

double log_unnorm_likelihood(const ModelState& state, const Dataset& data,
                             const BasisSet& basis) {
  return log_unnorm_likelihood(state, data, compute_predictors(state, data, basis));
}

double log_binary_likelihood(const ModelState& state, const Dataset& data,
                             const Predictors& pred) {
  double out = 0.0;
  for (std::size_t c = 0; c < data.cells(); ++c) {
    if (data.missing(c)) continue;
    out += state.w[c] ? pred.log_pi(c) : pred.log1m_pi(c);
  }
  return out;
}

double log_binary_likelihood(const ModelState& state, const Dataset& data,
                             const BasisSet& basis) {
  return log_binary_likelihood(state, data, compute_predictors(state, data, basis));
}

double log_complete_likelihood(const ModelState& state, const Dataset& data,
                               const Predictors& pred, double tol) {
  double norm = 0.0;
  for (std::size_t c = 0; c < data.cells(); ++c) {
    if (data.missing(c) || !state.w[c]) continue;
    norm += comp_log_normalizer(CompParams(pred.eta(c), pred.nu(c)), tol).log_c;
  }
  return log_binary_likelihood(state, data, pred) +
         log_unnorm_likelihood(state, data, pred) - norm;
}

// ---------------------------------------------------------------------------
// Priors

double log_normal_iid(const Eigen::VectorXd& v, double variance) {
  const double k = static_cast<double>(v.size());
  return -0.5 * k * (kLog2Pi + std::log(variance)) - 0.5 * v.squaredNorm() / variance;
}

double quad_form_Q_B(const Eigen::VectorXd& v, const BasisSet& basis) {
  // v' L L' v
  const Eigen::VectorXd Ltv = basis.Q_B_chol.transpose() * v;
  return Ltv.squaredNorm();
}

double log_basis_prior(const Eigen::VectorXd& v, double precision, const BasisSet& basis) {
  const double q = static_cast<double>(v.size());
  return 0.5 * (q * std::log(precision) + basis.log_det_Q_B) - 0.5 * q * kLog2Pi -
         0.5 * precision * quad_form_Q_B(v, basis);
}

double log_gamma_density(double x, double shape, double rate) {
  if (!(x > 0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_indicator_prior(const std::vector<std::uint8_t>& ind, double inclusion) {
  double out = 0.0;
  for (auto v : ind) out += v ? std::log(inclusion) : std::log1p(-inclusion);
  return out;
}

double log_priors(const ModelState& s, const Dataset& data, const BasisSet& basis,
                  const PriorConfig& cfg) {
  const double v = cfg.fixed_effect_variance;
  double out = log_normal_iid(s.beta1, v) + log_normal_iid(s.beta2, v) +
               log_normal_iid(s.zeta, v) +
               log_normal_iid(Eigen::VectorXd::Constant(1, s.alpha), v);
  out += log_basis_prior(s.gamma, s.kappa, basis) + log_basis_prior(s.delta, s.tau, basis);
  out += log_gamma_density(s.kappa, cfg.smoothing_shape, cfg.smoothing_rate) +
         log_gamma_density(s.tau, cfg.smoothing_shape, cfg.smoothing_rate);
  out += log_indicator_prior(s.I_gamma, cfg.indicator_inclusion) +
         log_indicator_prior(s.I_delta, cfg.indicator_inclusion);
  for (std::size_t c = 0; c < data.cells(); ++c) {
    if (data.missing(c)) continue;
    out += s.w[c] ? std::log(cfg.w_prior) : std::log1p(-cfg.w_prior);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

SimulatedCounts simulate_dataset(const ModelState& state, const Dataset& tmpl,
                                 const BasisSet& basis, std::uint64_t seed, int threads) {
  const Predictors pred(state, tmpl, basis);
  SimulatedCounts out;
  out.y.assign(tmpl.cells(), kMissing);
  out.w.assign(tmpl.cells(), 0);
  std::atomic<std::ptrdiff_t> failed{-1};
  std::string failure;
  for_cells(tmpl.cells(), threads, [&](std::size_t c) {
    if (tmpl.missing(c)) return;
    Rng rng = Rng::stream(seed, c);
    const bool detected = rng.uniform() < pred.pi(c);
    out.w[c] = detected ? 1 : 0;
    if (!detected) {
      out.y[c] = 0;
      return;
    }
    try {
      out.y[c] = comp_sample(CompParams(pred.eta(c), pred.nu(c)), rng);
    } catch (const std::exception& e) {
      std::ptrdiff_t expected = -1;
      if (failed.compare_exchange_strong(expected, static_cast<std::ptrdiff_t>(c))) {
        failure = e.what();
      }
    }
  });
  if (failed >= 0) {
    throw NumericError("simulate_dataset: cell " + std::to_string(failed.load()) + ": " +
                       failure);
  }
  return out;
}

SimulatedCounts simulate_dataset(const ModelState& state, const Dataset& tmpl,
                                 const BasisSet& basis, Rng& rng, int threads) {
  return simulate_dataset(state, tmpl, basis, rng(), threads);
}

std::vector<std::int64_t> simulate_auxiliary(const std::vector<std::uint8_t>& w,
                                             const Dataset& data, const Predictors& proposed,
                                             std::uint64_t seed, int threads) {
  std::vector<std::int64_t> z(data.cells(), kMissing);
  std::atomic<std::ptrdiff_t> failed{-1};
  std::string failure;
  for_cells(data.cells(), threads, [&](std::size_t c) {
    if (data.missing(c) || !w[c]) return;
    Rng rng = Rng::stream(seed, c);
    try {
      z[c] = comp_sample(CompParams(proposed.eta(c), proposed.nu(c)), rng);
    } catch (const std::exception& e) {
      std::ptrdiff_t expected = -1;
      if (failed.compare_exchange_strong(expected, static_cast<std::ptrdiff_t>(c))) {
        failure = e.what();
      }
    }
  });
  if (failed >= 0) {
    const auto c = static_cast<std::size_t>(failed.load());
    throw NumericError("auxiliary draw failed at cell (s = " +
                       std::to_string(data.location(c)) + ", t = " +
                       std::to_string(data.period(c)) + "): " + failure);
  }
  return z;
}

ModelState zip_mode(const ModelState& state) {
  ModelState s = state;
  s.alpha = 0.0;
  s.delta.setZero();
  std::fill(s.I_delta.begin(), s.I_delta.end(), 0);
  return s;
}

}  // namespace zicomp
