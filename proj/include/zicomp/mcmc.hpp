#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zicomp/graph_basis.hpp"
#include "zicomp/model.hpp"
#include "zicomp/rng.hpp"

namespace zicomp {

// Random-walk blocks with adapted proposals.
enum class Block { beta1 = 0, beta2, zeta, alpha, gamma, delta };
inline constexpr std::size_t kBlockCount = 6;
const char* block_name(Block b);

// ---------------------------------------------------------------------------
// Log-adaptive proposal (Shaby & Wells): log-scale and covariance updated
// once per batch of `interval` block updates with step 1 / k^c1.

struct LapConfig {
  double target_rate = 0.234;
  std::size_t interval = 50;
  double c0 = 1.0;
  double c1 = 0.8;
  double jitter = 1e-5;
};

struct LapState {
  double log_scale = 0.0;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd chol;  // lower factor of exp(log_scale) (cov + jitter I)
  std::size_t adapt_iter = 1;
  bool frozen = false;
  // current batch
  std::size_t batch_count = 0;
  std::size_t batch_accepts = 0;
  Eigen::VectorXd batch_sum;
  Eigen::MatrixXd batch_outer;

  static LapState initial(std::size_t dim, double initial_variance, const LapConfig& cfg);
  void refresh_chol(const LapConfig& cfg);
  // Records one block update; adapts at the end of each batch unless frozen.
  void record(const Eigen::VectorXd& value, bool accepted, const LapConfig& cfg);
};

struct BlockStats {
  double acceptance_rate = 0.0;
  std::optional<Eigen::MatrixXd> sample_cov;
};

void adapt_proposal(const BlockStats& stats, LapState& lap, const LapConfig& cfg);

// ---------------------------------------------------------------------------

enum class IndicatorSchedule { every_k, random_m };

struct ChainConfig {
  std::size_t n_iterations = 10000;
  std::optional<std::size_t> burn_in;  // default: half of n_iterations
  std::size_t thin = 1;
  std::uint64_t seed = 1;
  IndicatorSchedule indicator_schedule = IndicatorSchedule::every_k;
  std::size_t indicator_period = 10;     // every_k
  std::size_t indicators_per_iteration = 5;  // random_m
  LapConfig lap;
  // Initial proposal variance per block (diagonal), indexed by Block.
  std::array<double, kBlockCount> initial_variance{0.01, 0.01, 0.01, 0.01, 0.01, 0.01};
  // Settings forwarded from the run configuration.
  double rho = 0.99;
  std::size_t q = 0;
  double tol = 1e-10;
  bool zip = false;                // ν ≡ 1
  bool tractable_poisson = false;  // with zip: exact Poisson ratios, no auxiliaries
  int threads = 1;
  // Proposals with |log η| or |log ν| beyond these bounds are rejected.
  double max_abs_log_eta = 15.0;
  double max_abs_log_nu = 10.0;
  std::size_t progress_every = 1000;
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;

  std::size_t burn_in_iterations() const { return burn_in.value_or(n_iterations / 2); }
  void validate() const;
};

struct AcceptStats {
  std::uint64_t attempts = 0;
  std::uint64_t accepts = 0;
  double rate() const {
    return attempts ? static_cast<double>(accepts) / static_cast<double>(attempts) : 0.0;
  }
  friend bool operator==(const AcceptStats&, const AcceptStats&) = default;
};

struct McseEntry {
  double mcse = 0.0;
  std::size_t batches = 0;
};

struct ChainOutput {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> draws;  // one row per recorded iteration
  std::map<std::string, AcceptStats> acceptance;
  std::map<std::string, double> timing_seconds;  // wall clock, not reproducible
  std::map<std::string, McseEntry> mcse;
  std::vector<double> w_mean;  // per cell, over recorded iterations
  ModelState final_state;
  std::size_t n_iterations = 0;
  std::size_t burn_in = 0;
  std::size_t thin = 1;
  std::uint64_t seed = 0;
  std::uint64_t aux_failures = 0;
  std::uint64_t guard_rejections = 0;

  std::size_t sample_count() const { return draws.size(); }
  std::ptrdiff_t column_index(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
  // Reconstructs the model state of recorded draw k (w is taken from final_state).
  ModelState state_at(std::size_t k) const;
  std::vector<std::vector<double>> inclusion_traces(const std::string& block) const;

  // Deterministic content only (timing excluded).
  bool same_draws(const ChainOutput& other) const;
};

std::vector<std::string> sample_columns(std::size_t p, std::size_t q);
std::vector<double> flatten_state(const ModelState& s);

// Per-cell pieces of the w update, exposed for testing.
struct WCell {
  double log_pi;
  double log1m_pi;
  double eta;
  double nu;
  double w_prior;
};
// Log acceptance ratio for swapping w -> 1 - w given auxiliary z drawn from
// NB(η, ν) when the proposal is 0 and from COMP(η, ν) when it is 1.
double w_swap_log_ratio(std::uint8_t w, const WCell& cell, std::int64_t z);
std::uint8_t update_w_cell(std::uint8_t w, const WCell& cell, Rng& rng, bool* accepted = nullptr);
// Exact swap for ν = 1, where c = e^η is available.
std::uint8_t update_w_cell_poisson(std::uint8_t w, const WCell& cell, Rng& rng,
                                   bool* accepted = nullptr);

struct Checkpoint;

// The five-step hybrid sampler: w (mixture-auxiliary exchange), β1 (MH),
// β2/ζ/α/γ/δ (exchange), indicators (exchange, scheduled), κ/τ (Gibbs).
class HybridSampler {
 public:
  HybridSampler(const Dataset& data, const BasisSet& basis, PriorConfig prior,
                ChainConfig cfg);

  // Coefficients at 0, κ = τ = 1, indicators on, w = 1 where y > 0 and
  // Bernoulli(0.5) elsewhere.
  void initialize();
  void set_state(ModelState s);

  const ModelState& state() const { return state_; }
  const Predictors& predictors() const { return pred_; }
  std::size_t iteration() const { return iteration_; }
  const ChainConfig& config() const { return cfg_; }
  const LapState& lap(Block b) const { return lap_[static_cast<std::size_t>(b)]; }
  const std::map<std::string, AcceptStats>& acceptance() const { return acceptance_; }

  void update_w();
  void update_beta1();
  bool update_block(Block b);
  void update_indicators();
  void update_smoothing();
  void step();

  // Runs until cfg.n_iterations, appending to the output accumulated so far.
  ChainOutput run(std::ostream* progress = nullptr);

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& cp);

 private:
  bool exchange_accept(const Predictors& proposed, double log_prior_ratio,
                       std::uint64_t stream_tag);
  bool within_guard(const Predictors& p) const;
  std::uint64_t stream_seed(std::uint64_t tag) const;
  void record_draw();
  void write_progress(std::ostream& out) const;
  bool block_active(Block b) const;

  const Dataset& data_;
  const BasisSet& basis_;
  PriorConfig prior_;
  ChainConfig cfg_;
  ModelState state_;
  Predictors pred_;
  Rng rng_;
  std::size_t iteration_ = 0;
  std::array<LapState, kBlockCount> lap_;
  std::map<std::string, AcceptStats> acceptance_;
  std::map<std::string, double> timing_;
  std::vector<std::vector<double>> draws_;
  std::vector<double> w_sum_;
  std::uint64_t aux_failures_ = 0;
  std::uint64_t guard_rejections_ = 0;
};

// Convenience wrapper: construct, initialize (or start from `initial`), run.
ChainOutput run_chain(const Dataset& data, const BasisSet& basis, const PriorConfig& prior,
                      const ChainConfig& cfg, const std::optional<ModelState>& initial = {},
                      std::ostream* progress = nullptr);

// Thrown when the chain cannot continue; a checkpoint of the last valid
// state has been written when a checkpoint path is configured.
class ChainAbort : public std::runtime_error {
 public:
  ChainAbort(const std::string& what, std::filesystem::path checkpoint)
      : std::runtime_error(what), checkpoint_(std::move(checkpoint)) {}
  const std::filesystem::path& checkpoint() const { return checkpoint_; }

 private:
  std::filesystem::path checkpoint_;
};

}  // namespace zicomp
