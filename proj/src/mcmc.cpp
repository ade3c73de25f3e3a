#include "zicomp/mcmc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <random>

#include "zicomp/checkpoint.hpp"
#include "zicomp/comp_dist.hpp"
#include "zicomp/diagnostics.hpp"
#include "zicomp/errors.hpp"

namespace zicomp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Stream tags for per-cell auxiliary draws.
constexpr std::uint64_t kTagW = 1;
constexpr std::uint64_t kTagBlock = 16;
constexpr std::uint64_t kTagIndicatorGamma = 1u << 20;
constexpr std::uint64_t kTagIndicatorDelta = 2u << 20;

class ScopedTimer {
 public:
  ScopedTimer(std::map<std::string, double>& sink, const char* key)
      : sink_(sink), key_(key), start_(std::chrono::steady_clock::now()) {}
  ~ScopedTimer() {
    sink_[key_] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::map<std::string, double>& sink_;
  const char* key_;
  std::chrono::steady_clock::time_point start_;
};

Eigen::VectorXd block_value(const ModelState& s, Block b) {
  switch (b) {
    case Block::beta1: return s.beta1;
    case Block::beta2: return s.beta2;
    case Block::zeta: return s.zeta;
    case Block::alpha: return Eigen::VectorXd::Constant(1, s.alpha);
    case Block::gamma: return s.gamma;
    case Block::delta: return s.delta;
  }
  return {};
}

void set_block_value(ModelState& s, Block b, const Eigen::VectorXd& v) {
  switch (b) {
    case Block::beta1: s.beta1 = v; break;
    case Block::beta2: s.beta2 = v; break;
    case Block::zeta: s.zeta = v; break;
    case Block::alpha: s.alpha = v(0); break;
    case Block::gamma: s.gamma = v; break;
    case Block::delta: s.delta = v; break;
  }
}

double cell_log_h(double y, double log_eta, double nu) {
  if (y == 0.0) return 0.0;
  return nu * (y * log_eta - std::lgamma(y + 1.0));
}

}  // namespace

const char* block_name(Block b) {
  static constexpr std::array<const char*, kBlockCount> names{"beta1", "beta2", "zeta",
                                                              "alpha", "gamma", "delta"};
  return names[static_cast<std::size_t>(b)];
}

// ---------------------------------------------------------------------------
// LAP

LapState LapState::initial(std::size_t dim, double initial_variance, const LapConfig& cfg) {
  LapState s;
  const auto d = static_cast<Eigen::Index>(dim);
  s.log_scale = std::log(2.38 * 2.38 / static_cast<double>(std::max<std::size_t>(dim, 1)));
  s.cov = Eigen::MatrixXd::Identity(d, d) * initial_variance;
  s.batch_sum = Eigen::VectorXd::Zero(d);
  s.batch_outer = Eigen::MatrixXd::Zero(d, d);
  s.refresh_chol(cfg);
  return s;
}

void LapState::refresh_chol(const LapConfig& cfg) {
  const auto d = cov.rows();
  Eigen::MatrixXd S = std::exp(log_scale) *
                      (cov + cfg.jitter * Eigen::MatrixXd::Identity(d, d));
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    // Fall back to the diagonal when accumulated roundoff breaks definiteness.
    S = S.diagonal().cwiseMax(cfg.jitter).asDiagonal();
    llt.compute(S);
  }
  chol = llt.matrixL();
}

void adapt_proposal(const BlockStats& stats, LapState& lap, const LapConfig& cfg) {
  if (lap.frozen) return;
  const double g1 = 1.0 / std::pow(static_cast<double>(lap.adapt_iter), cfg.c1);
  const double g2 = cfg.c0 * g1;
  lap.log_scale += g2 * (stats.acceptance_rate - cfg.target_rate);
  if (stats.sample_cov) lap.cov += g1 * (*stats.sample_cov - lap.cov);
  lap.cov = 0.5 * (lap.cov + lap.cov.transpose());
  lap.refresh_chol(cfg);
  ++lap.adapt_iter;
}

void LapState::record(const Eigen::VectorXd& value, bool accepted, const LapConfig& cfg) {
  if (frozen) return;
  ++batch_count;
  if (accepted) ++batch_accepts;
  batch_sum += value;
  batch_outer += value * value.transpose();
  if (batch_count < cfg.interval) return;
  BlockStats stats;
  const double n = static_cast<double>(batch_count);
  stats.acceptance_rate = static_cast<double>(batch_accepts) / n;
  if (batch_count > 1) {
    const Eigen::VectorXd mean = batch_sum / n;
    stats.sample_cov = (batch_outer - n * mean * mean.transpose()) / (n - 1.0);
  }
  adapt_proposal(stats, *this, cfg);
  batch_count = 0;
  batch_accepts = 0;
  batch_sum.setZero();
  batch_outer.setZero();
}

// ---------------------------------------------------------------------------

void ChainConfig::validate() const {
  if (thin < 1) throw ValidationError("thin must be >= 1");
  if (indicator_period < 1) throw ValidationError("indicator period k must be >= 1");
  if (!(lap.target_rate > 0 && lap.target_rate < 1)) {
    throw ValidationError("target acceptance rate must lie in (0, 1)");
  }
  if (lap.interval < 2) throw ValidationError("adaptation interval must be >= 2");
  if (burn_in && *burn_in > n_iterations) throw ValidationError("burn-in exceeds iterations");
  if (tractable_poisson && !zip) {
    throw ValidationError("tractable Poisson ratios require the ZIP (nu = 1) mode");
  }
  if (threads < 1) throw ValidationError("threads must be >= 1");
}

std::vector<std::string> sample_columns(std::size_t p, std::size_t q) {
  std::vector<std::string> cols;
  for (std::size_t k = 0; k < p; ++k) cols.push_back("beta1_" + std::to_string(k));
  for (std::size_t k = 0; k < p; ++k) cols.push_back("beta2_" + std::to_string(k));
  for (int k = 0; k < kMonthDummies; ++k) cols.push_back("zeta_" + std::to_string(k));
  cols.push_back("alpha");
  for (std::size_t k = 0; k < q; ++k) cols.push_back("gamma_" + std::to_string(k));
  for (std::size_t k = 0; k < q; ++k) cols.push_back("delta_" + std::to_string(k));
  for (std::size_t k = 0; k < q; ++k) cols.push_back("I_gamma_" + std::to_string(k));
  for (std::size_t k = 0; k < q; ++k) cols.push_back("I_delta_" + std::to_string(k));
  cols.push_back("kappa");
  cols.push_back("tau");
  return cols;
}

std::vector<double> flatten_state(const ModelState& s) {
  std::vector<double> row;
  auto push = [&row](const Eigen::VectorXd& v) {
    row.insert(row.end(), v.data(), v.data() + v.size());
  };
  push(s.beta1);
  push(s.beta2);
  push(s.zeta);
  row.push_back(s.alpha);
  push(s.gamma);
  push(s.delta);
  for (auto v : s.I_gamma) row.push_back(v);
  for (auto v : s.I_delta) row.push_back(v);
  row.push_back(s.kappa);
  row.push_back(s.tau);
  return row;
}

std::ptrdiff_t ChainOutput::column_index(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  return it == columns.end() ? -1 : it - columns.begin();
}

std::vector<double> ChainOutput::column(const std::string& name) const {
  const auto k = column_index(name);
  if (k < 0) throw ValidationError("unknown sample column " + name);
  std::vector<double> out;
  out.reserve(draws.size());
  for (const auto& row : draws) out.push_back(row[static_cast<std::size_t>(k)]);
  return out;
}

ModelState ChainOutput::state_at(std::size_t k) const {
  ModelState s = final_state;
  const auto& row = draws.at(k);
  const std::size_t p = static_cast<std::size_t>(s.beta1.size());
  const std::size_t q = static_cast<std::size_t>(s.gamma.size());
  std::size_t i = 0;
  for (std::size_t j = 0; j < p; ++j) s.beta1(static_cast<Eigen::Index>(j)) = row[i++];
  for (std::size_t j = 0; j < p; ++j) s.beta2(static_cast<Eigen::Index>(j)) = row[i++];
  for (int j = 0; j < kMonthDummies; ++j) s.zeta(j) = row[i++];
  s.alpha = row[i++];
  for (std::size_t j = 0; j < q; ++j) s.gamma(static_cast<Eigen::Index>(j)) = row[i++];
  for (std::size_t j = 0; j < q; ++j) s.delta(static_cast<Eigen::Index>(j)) = row[i++];
  for (std::size_t j = 0; j < q; ++j) s.I_gamma[j] = row[i++] != 0.0;
  for (std::size_t j = 0; j < q; ++j) s.I_delta[j] = row[i++] != 0.0;
  s.kappa = row[i++];
  s.tau = row[i++];
  return s;
}

std::vector<std::vector<double>> ChainOutput::inclusion_traces(const std::string& block) const {
  std::vector<std::vector<double>> out;
  const std::size_t q = static_cast<std::size_t>(final_state.gamma.size());
  for (std::size_t j = 0; j < q; ++j) out.push_back(column("I_" + block + "_" + std::to_string(j)));
  return out;
}

bool ChainOutput::same_draws(const ChainOutput& o) const {
  return columns == o.columns && draws == o.draws && acceptance == o.acceptance &&
         w_mean == o.w_mean && final_state == o.final_state &&
         aux_failures == o.aux_failures && guard_rejections == o.guard_rejections;
}

// ---------------------------------------------------------------------------
// w update

double w_swap_log_ratio(std::uint8_t w, const WCell& c, std::int64_t z) {
  const std::uint8_t wp = 1 - w;
  auto log_g = [&](std::uint8_t which) {
    if (which == 0) return nb_log_pmf(z, c.eta, c.nu);
    return cell_log_h(static_cast<double>(z), std::log(c.eta), c.nu);
  };
  auto log_factor = [&](std::uint8_t which) {
    return which ? std::log(c.w_prior) + c.log_pi : std::log1p(-c.w_prior) + c.log1m_pi;
  };
  const double num = log_factor(wp) + log_g(w);
  if (num == kNegInf) return kNegInf;
  return num - log_factor(w) - log_g(wp);
}

std::uint8_t update_w_cell(std::uint8_t w, const WCell& c, Rng& rng, bool* accepted) {
  const std::uint8_t wp = 1 - w;
  const std::int64_t z = wp == 0 ? nb_sample(c.eta, c.nu, rng)
                                 : comp_sample(CompParams(c.eta, c.nu), rng);
  const bool ok = std::log(rng.uniform()) < w_swap_log_ratio(w, c, z);
  if (accepted) *accepted = ok;
  return ok ? wp : w;
}

std::uint8_t update_w_cell_poisson(std::uint8_t w, const WCell& c, Rng& rng, bool* accepted) {
  auto log_target = [&](std::uint8_t which) {
    return which ? std::log(c.w_prior) + c.log_pi - c.eta
                 : std::log1p(-c.w_prior) + c.log1m_pi;
  };
  const std::uint8_t wp = 1 - w;
  const bool ok = std::log(rng.uniform()) < log_target(wp) - log_target(w);
  if (accepted) *accepted = ok;
  return ok ? wp : w;
}

// ---------------------------------------------------------------------------
// Sampler

HybridSampler::HybridSampler(const Dataset& data, const BasisSet& basis, PriorConfig prior,
                             ChainConfig cfg)
    : data_(data), basis_(basis), prior_(prior), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  data_.validate();
  prior_.validate();
  cfg_.validate();
  if (basis_.n() != data_.n) throw ValidationError("basis rows differ from location count");
  const std::size_t p = data_.p(), q = basis_.q();
  const std::array<std::size_t, kBlockCount> dims{p, p, kMonthDummies, 1, q, q};
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    lap_[b] = LapState::initial(dims[b], cfg_.initial_variance[b], cfg_.lap);
  }
  for (std::size_t b = 0; b < kBlockCount; ++b) acceptance_[block_name(static_cast<Block>(b))];
  acceptance_["w"];
  acceptance_["I_gamma"];
  acceptance_["I_delta"];
  w_sum_.assign(data_.cells(), 0.0);
}

void HybridSampler::initialize() {
  ModelState s = ModelState::zeros(data_.cells(), data_.p(), basis_.q());
  for (std::size_t c = 0; c < data_.cells(); ++c) {
    if (data_.missing(c)) {
      s.w[c] = 0;
    } else if (data_.y[c] > 0) {
      s.w[c] = 1;
    } else {
      s.w[c] = rng_.uniform() < 0.5 ? 1 : 0;
    }
  }
  set_state(std::move(s));
}

void HybridSampler::set_state(ModelState s) {
  if (s.w.size() != data_.cells()) throw ValidationError("state w has wrong length");
  for (std::size_t c = 0; c < data_.cells(); ++c) {
    if (!data_.missing(c) && data_.y[c] > 0 && !s.w[c]) {
      throw ValidationError("state violates w = 1 where y > 0 at cell " + std::to_string(c));
    }
    if (data_.missing(c)) s.w[c] = 0;
  }
  if (!(s.kappa > 0) || !(s.tau > 0)) throw ValidationError("kappa and tau must be positive");
  if (cfg_.zip) s = zip_mode(s);
  pred_ = Predictors(s, data_, basis_);
  state_ = std::move(s);
}

std::uint64_t HybridSampler::stream_seed(std::uint64_t tag) const {
  return derive_seed(cfg_.seed, iteration_, tag);
}

bool HybridSampler::block_active(Block b) const {
  if (cfg_.zip && (b == Block::alpha || b == Block::delta)) return false;
  return true;
}

bool HybridSampler::within_guard(const Predictors& p) const {
  for (std::size_t c = 0; c < data_.cells(); ++c) {
    if (data_.missing(c)) continue;
    if (!(std::abs(p.log_eta(c)) <= cfg_.max_abs_log_eta)) return false;
  }
  for (std::size_t s = 0; s < data_.n; ++s) {
    if (!(std::abs(p.log_nu_loc(s)) <= cfg_.max_abs_log_nu)) return false;
  }
  return true;
}

void HybridSampler::update_w() {
  ScopedTimer timer(timing_, "w");
  const std::uint64_t seed = stream_seed(kTagW);
  const std::size_t cells = data_.cells();
  std::vector<std::uint8_t> proposed(cells, 0), accepted(cells, 0), failed(cells, 0);
  auto body = [&](std::size_t c) {
    if (data_.missing(c) || data_.y[c] != 0) return;
    proposed[c] = 1;
    Rng rng = Rng::stream(seed, c);
    const WCell cell{pred_.log_pi(c), pred_.log1m_pi(c), pred_.eta(c), pred_.nu(c),
                     prior_.w_prior};
    bool ok = false;
    try {
      const std::uint8_t w = state_.w[c];
      state_.w[c] = cfg_.tractable_poisson ? update_w_cell_poisson(w, cell, rng, &ok)
                                           : update_w_cell(w, cell, rng, &ok);
    } catch (const std::exception&) {
      failed[c] = 1;
    }
    accepted[c] = ok;
  };
#if defined(_OPENMP)
  if (cfg_.threads > 1) {
#pragma omp parallel for schedule(static) num_threads(cfg_.threads)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(cells); ++c) {
      body(static_cast<std::size_t>(c));
    }
  } else
#endif
  {
    for (std::size_t c = 0; c < cells; ++c) body(c);
  }
  auto& st = acceptance_["w"];
  for (std::size_t c = 0; c < cells; ++c) {
    st.attempts += proposed[c];
    st.accepts += accepted[c];
    aux_failures_ += failed[c];
  }
}

void HybridSampler::update_beta1() {
  ScopedTimer timer(timing_, "beta1");
  auto& lap = lap_[static_cast<std::size_t>(Block::beta1)];
  const Eigen::VectorXd cur = state_.beta1;
  Eigen::VectorXd z(cur.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng_.normal();
  const Eigen::VectorXd prop = cur + lap.chol * z;
  Predictors next = pred_;
  next.set_beta1(prop, data_);
  const double log_ratio = log_binary_likelihood(state_, data_, next) -
                           log_binary_likelihood(state_, data_, pred_) +
                           log_normal_iid(prop, prior_.fixed_effect_variance) -
                           log_normal_iid(cur, prior_.fixed_effect_variance);
  const bool ok = std::log(rng_.uniform()) < log_ratio;
  if (ok) {
    state_.beta1 = prop;
    pred_ = std::move(next);
  }
  auto& st = acceptance_["beta1"];
  ++st.attempts;
  st.accepts += ok;
  lap.record(state_.beta1, ok, cfg_.lap);
}

bool HybridSampler::exchange_accept(const Predictors& proposed, double log_prior_ratio,
                                    std::uint64_t tag) {
  if (!within_guard(proposed)) {
    ++guard_rejections_;
    rng_.uniform();  // keep the master stream aligned across outcomes
    return false;
  }
  const std::size_t cells = data_.cells();
  std::vector<double> terms(cells, 0.0);
  if (cfg_.tractable_poisson) {
    for (std::size_t c = 0; c < cells; ++c) {
      if (data_.missing(c) || !state_.w[c]) continue;
      const double y = static_cast<double>(data_.y[c]);
      terms[c] = (y * proposed.log_eta(c) - proposed.eta(c)) -
                 (y * pred_.log_eta(c) - pred_.eta(c));
    }
  } else {
    std::vector<std::int64_t> z;
    try {
      z = simulate_auxiliary(state_.w, data_, proposed, stream_seed(tag), cfg_.threads);
    } catch (const NumericError&) {
      ++aux_failures_;
      rng_.uniform();
      return false;
    }
    for (std::size_t c = 0; c < cells; ++c) {
      if (data_.missing(c) || !state_.w[c]) continue;
      const double y = static_cast<double>(data_.y[c]);
      const double zc = static_cast<double>(z[c]);
      const double le1 = proposed.log_eta(c), nu1 = proposed.nu(c);
      const double le0 = pred_.log_eta(c), nu0 = pred_.nu(c);
      terms[c] = cell_log_h(y, le1, nu1) - cell_log_h(y, le0, nu0) +
                 cell_log_h(zc, le0, nu0) - cell_log_h(zc, le1, nu1);
    }
  }
  double log_ratio = log_prior_ratio;
  for (double t : terms) log_ratio += t;
  return std::log(rng_.uniform()) < log_ratio;
}

bool HybridSampler::update_block(Block b) {
  if (b == Block::beta1) {
    const auto before = acceptance_["beta1"].accepts;
    update_beta1();
    return acceptance_["beta1"].accepts != before;
  }
  if (!block_active(b)) return false;
  ScopedTimer timer(timing_, block_name(b));
  auto& lap = lap_[static_cast<std::size_t>(b)];
  const Eigen::VectorXd cur = block_value(state_, b);
  Eigen::VectorXd z(cur.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng_.normal();
  const Eigen::VectorXd prop = cur + lap.chol * z;

  Predictors next = pred_;
  double log_prior_ratio = 0.0;
  switch (b) {
    case Block::beta2:
      next.set_beta2(prop, data_);
      break;
    case Block::zeta:
      next.set_zeta(prop, data_);
      break;
    case Block::alpha:
      next.set_alpha(prop(0));
      break;
    case Block::gamma:
      next.set_gamma(masked(prop, state_.I_gamma), basis_);
      break;
    case Block::delta:
      next.set_delta(masked(prop, state_.I_delta), basis_);
      break;
    case Block::beta1:
      break;
  }
  if (b == Block::gamma) {
    log_prior_ratio = -0.5 * state_.kappa * (quad_form_Q_B(prop, basis_) - quad_form_Q_B(cur, basis_));
  } else if (b == Block::delta) {
    log_prior_ratio = -0.5 * state_.tau * (quad_form_Q_B(prop, basis_) - quad_form_Q_B(cur, basis_));
  } else {
    log_prior_ratio = log_normal_iid(prop, prior_.fixed_effect_variance) -
                      log_normal_iid(cur, prior_.fixed_effect_variance);
  }
  const bool ok =
      exchange_accept(next, log_prior_ratio, kTagBlock + static_cast<std::uint64_t>(b));
  if (ok) {
    set_block_value(state_, b, prop);
    pred_ = std::move(next);
  }
  auto& st = acceptance_[block_name(b)];
  ++st.attempts;
  st.accepts += ok;
  lap.record(block_value(state_, b), ok, cfg_.lap);
  return ok;
}

void HybridSampler::update_indicators() {
  ScopedTimer timer(timing_, "indicators");
  const std::size_t q = basis_.q();
  std::vector<std::size_t> gamma_idx, delta_idx;
  if (cfg_.indicator_schedule == IndicatorSchedule::every_k) {
    if (iteration_ % cfg_.indicator_period != 0) return;
    gamma_idx.resize(q);
    std::iota(gamma_idx.begin(), gamma_idx.end(), std::size_t{0});
    delta_idx = gamma_idx;
  } else {
    std::vector<std::size_t> all(q);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const std::size_t m = std::min(cfg_.indicators_per_iteration, q);
    // Partial Fisher-Yates driven by the master stream.
    auto pick = [&]() {
      std::vector<std::size_t> v = all;
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng_() % (q - i));
        std::swap(v[i], v[j]);
      }
      v.resize(m);
      return v;
    };
    gamma_idx = pick();
    delta_idx = pick();
  }
  const double log_in = std::log(prior_.indicator_inclusion);
  const double log_out = std::log1p(-prior_.indicator_inclusion);

  for (std::size_t j : gamma_idx) {
    std::vector<std::uint8_t> ind = state_.I_gamma;
    ind[j] = 1 - ind[j];
    Predictors next = pred_;
    next.set_gamma(masked(state_.gamma, ind), basis_);
    const double prior_ratio = ind[j] ? log_in - log_out : log_out - log_in;
    const bool ok = exchange_accept(next, prior_ratio, kTagIndicatorGamma + j);
    if (ok) {
      state_.I_gamma = std::move(ind);
      pred_ = std::move(next);
    }
    auto& st = acceptance_["I_gamma"];
    ++st.attempts;
    st.accepts += ok;
  }
  if (cfg_.zip) return;
  for (std::size_t j : delta_idx) {
    std::vector<std::uint8_t> ind = state_.I_delta;
    ind[j] = 1 - ind[j];
    Predictors next = pred_;
    next.set_delta(masked(state_.delta, ind), basis_);
    const double prior_ratio = ind[j] ? log_in - log_out : log_out - log_in;
    const bool ok = exchange_accept(next, prior_ratio, kTagIndicatorDelta + j);
    if (ok) {
      state_.I_delta = std::move(ind);
      pred_ = std::move(next);
    }
    auto& st = acceptance_["I_delta"];
    ++st.attempts;
    st.accepts += ok;
  }
}

void HybridSampler::update_smoothing() {
  ScopedTimer timer(timing_, "smoothing");
  const double half_q = 0.5 * static_cast<double>(basis_.q());
  const double a = prior_.smoothing_shape + half_q;
  {
    const double rate = prior_.smoothing_rate + 0.5 * quad_form_Q_B(state_.gamma, basis_);
    std::gamma_distribution<double> g(a, 1.0 / rate);
    state_.kappa = g(rng_);
  }
  {
    const double rate = prior_.smoothing_rate + 0.5 * quad_form_Q_B(state_.delta, basis_);
    std::gamma_distribution<double> g(a, 1.0 / rate);
    state_.tau = g(rng_);
  }
  // Gamma draws can underflow to zero for tiny shapes; keep the state valid.
  state_.kappa = std::max(state_.kappa, std::numeric_limits<double>::min());
  state_.tau = std::max(state_.tau, std::numeric_limits<double>::min());
}

void HybridSampler::step() {
  const std::size_t burn_in = cfg_.burn_in_iterations();
  if (iteration_ >= burn_in) {
    for (auto& l : lap_) l.frozen = true;
  }
  update_w();
  update_beta1();
  for (Block b : {Block::beta2, Block::zeta, Block::alpha, Block::gamma, Block::delta}) {
    update_block(b);
  }
  update_indicators();
  update_smoothing();
  if (iteration_ >= burn_in && (iteration_ - burn_in + 1) % cfg_.thin == 0) record_draw();
  ++iteration_;
}

void HybridSampler::record_draw() {
  draws_.push_back(flatten_state(state_));
  for (std::size_t c = 0; c < data_.cells(); ++c) w_sum_[c] += state_.w[c];
}

void HybridSampler::write_progress(std::ostream& out) const {
  nlohmann::json j;
  j["iteration"] = iteration_;
  for (const auto& [k, v] : acceptance_) j["acceptance"][k] = v.rate();
  for (const auto& [k, v] : timing_) j["seconds"][k] = v;
  j["included_gamma"] = std::count(state_.I_gamma.begin(), state_.I_gamma.end(), 1);
  j["included_delta"] = std::count(state_.I_delta.begin(), state_.I_delta.end(), 1);
  j["aux_failures"] = aux_failures_;
  j["guard_rejections"] = guard_rejections_;
  out << j.dump() << "\n";
  out.flush();
}

ChainOutput HybridSampler::run(std::ostream* progress) {
  while (iteration_ < cfg_.n_iterations) {
    try {
      step();
    } catch (const std::exception& e) {
      std::filesystem::path where;
      if (!cfg_.checkpoint_path.empty()) {
        where = cfg_.checkpoint_path;
        write_checkpoint(where, checkpoint());
      }
      throw ChainAbort(std::string("chain aborted at iteration ") +
                           std::to_string(iteration_) + ": " + e.what(),
                       where);
    }
    if (progress && cfg_.progress_every && iteration_ % cfg_.progress_every == 0) {
      write_progress(*progress);
    }
    if (cfg_.checkpoint_every && !cfg_.checkpoint_path.empty() &&
        iteration_ % cfg_.checkpoint_every == 0) {
      write_checkpoint(cfg_.checkpoint_path, checkpoint());
    }
  }

  ChainOutput out;
  out.columns = sample_columns(data_.p(), basis_.q());
  out.draws = draws_;
  out.acceptance = acceptance_;
  out.timing_seconds = timing_;
  out.final_state = state_;
  out.n_iterations = cfg_.n_iterations;
  out.burn_in = cfg_.burn_in_iterations();
  out.thin = cfg_.thin;
  out.seed = cfg_.seed;
  out.aux_failures = aux_failures_;
  out.guard_rejections = guard_rejections_;
  out.w_mean.assign(data_.cells(), 0.0);
  if (!draws_.empty()) {
    for (std::size_t c = 0; c < data_.cells(); ++c) {
      out.w_mean[c] = w_sum_[c] / static_cast<double>(draws_.size());
    }
  }
  if (draws_.size() >= kMinMcseLength) {
    for (std::size_t k = 0; k < out.columns.size(); ++k) {
      std::vector<double> trace;
      trace.reserve(draws_.size());
      for (const auto& row : draws_) trace.push_back(row[k]);
      const auto m = batch_means_mcse(trace);
      out.mcse[out.columns[k]] = {m.mcse, m.batches};
    }
  }
  return out;
}

Checkpoint HybridSampler::checkpoint() const {
  Checkpoint cp;
  cp.state = state_;
  cp.rng = rng_.state();
  cp.iteration = iteration_;
  cp.lap = lap_;
  cp.acceptance = acceptance_;
  cp.draws = draws_;
  cp.w_sum = w_sum_;
  cp.aux_failures = aux_failures_;
  cp.guard_rejections = guard_rejections_;
  cp.seed = cfg_.seed;
  return cp;
}

void HybridSampler::restore(const Checkpoint& cp) {
  if (cp.seed != cfg_.seed) throw ValidationError("checkpoint seed differs from configuration");
  if (cp.w_sum.size() != data_.cells()) throw ValidationError("checkpoint does not match dataset");
  set_state(cp.state);
  rng_.set_state(cp.rng);
  iteration_ = cp.iteration;
  lap_ = cp.lap;
  acceptance_ = cp.acceptance;
  draws_ = cp.draws;
  w_sum_ = cp.w_sum;
  aux_failures_ = cp.aux_failures;
  guard_rejections_ = cp.guard_rejections;
}

ChainOutput run_chain(const Dataset& data, const BasisSet& basis, const PriorConfig& prior,
                      const ChainConfig& cfg, const std::optional<ModelState>& initial,
                      std::ostream* progress) {
  HybridSampler sampler(data, basis, prior, cfg);
  if (initial) {
    sampler.set_state(*initial);
  } else {
    sampler.initialize();
  }
  return sampler.run(progress);
}

}  // namespace zicomp
