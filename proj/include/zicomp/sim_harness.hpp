#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <string>
#include <vector>

#include "zicomp/diagnostics.hpp"
#include "zicomp/graph_basis.hpp"
#include "zicomp/mcmc.hpp"
#include "zicomp/model.hpp"

namespace zicomp {

enum class ScenarioId { full, const_dispersion, fixed_only, covariate_only };
const char* scenario_name(ScenarioId id);
ScenarioId parse_scenario(const std::string& name);

struct ScenarioSpec {
  ScenarioId id = ScenarioId::full;
  std::size_t rows = 10;
  std::size_t cols = 10;
  std::size_t T = 6;
  std::size_t q_true = 10;
  std::size_t q_fit = 20;
  std::uint64_t seed = 1;
  double rho = 0.99;
  // Draw γ, δ afresh for every replicate instead of once per scenario.
  bool redraw_per_replicate = false;
};

// "large-<id>" (30x30, T=24, q 25/50) or "desk-<id>" (10x10, T=6, q 10/20),
// with <id> one of full, const_dispersion, fixed_only, covariate_only.
ScenarioSpec scenario_preset(const std::string& name);

nlohmann::json scenario_spec_to_json(const ScenarioSpec& s);
ScenarioSpec scenario_spec_from_json(const nlohmann::json& j);

struct Scenario {
  ScenarioSpec spec;
  AdjacencyGraph graph;
  BasisSet basis;        // q_fit leading eigenvectors; the first q_true generate the truth
  Dataset design;        // covariates and month dummies, y all zero
  ModelState truth;      // in the q_fit dimension, unused coordinates zero and excluded
};

Scenario make_scenario(const ScenarioSpec& spec);

// γ ~ N(0, Q_B⁻¹ / κ) on the leading q_true vectors of `basis`, zero elsewhere.
Eigen::VectorXd draw_basis_coefficients(const BasisSet& basis, std::size_t q_true,
                                        double precision, Rng& rng);

// Documented split: replicate r uses derive_seed(base, r, 1) for its data and
// derive_seed(base, r, 2) for its chain; truth redraws use derive_seed(base, r, 3).
std::uint64_t replicate_data_seed(std::uint64_t base, std::size_t rep);
std::uint64_t replicate_chain_seed(std::uint64_t base, std::size_t rep);
std::uint64_t replicate_truth_seed(std::uint64_t base, std::size_t rep);

// Simulated counts from the scenario truth (or an explicit truth).
Dataset simulate_scenario_data(const Scenario& sc, std::uint64_t seed);
Dataset simulate_scenario_data(const Scenario& sc, const ModelState& truth, std::uint64_t seed);

// Fixed-effect sample columns with a non-empty design column (month dummies
// for months absent from the data carry no information).
std::vector<std::string> identifiable_fixed_effects(const Scenario& sc, bool zip = false);
double truth_value(const ModelState& truth, const std::string& column);

struct ReplicateResult {
  std::size_t replicate = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t chain_seed = 0;
  bool ok = false;
  std::string error;
  ModelState truth;
  SummaryTable summary;
  std::vector<double> inclusion_gamma;
  std::vector<double> inclusion_delta;
  std::uint64_t aux_failures = 0;
  double seconds = 0.0;
};

struct ParameterRate {
  std::string name;
  double truth = 0.0;
  std::size_t replicates = 0;
  std::size_t covered = 0;
  std::size_t type1 = 0;  // true zero, HPD excludes 0
  std::size_t type2 = 0;  // true nonzero, HPD includes 0
  double coverage() const;
};

struct StudyReport {
  std::string scenario;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  bool degenerate = false;  // no replicate produced draws: rates undefined
  double level = 0.95;
  std::vector<ParameterRate> parameters;
  std::vector<ReplicateResult> runs;

  double pooled_coverage() const;
  double pooled_type1() const;  // NaN without true-zero parameters
  double pooled_type2() const;
};

struct StudyOptions {
  double level = 0.95;
  std::filesystem::path output_dir;  // per-replicate artifacts when non-empty
  std::ostream* log = nullptr;
  // Start each chain at the truth instead of the default initialization.
  bool start_at_truth = false;
};

StudyReport run_replicates(const Scenario& sc, std::size_t n_reps, const ChainConfig& cfg,
                           const PriorConfig& prior, const StudyOptions& opts = {});

nlohmann::json study_report_to_json(const StudyReport& r);
void write_study_report_csv(std::ostream& out, const StudyReport& r);

struct BlockOverlap {
  std::vector<std::size_t> selected;        // inclusion >= 0.5
  std::vector<std::size_t> truth;           // truth indicators on
  std::vector<std::size_t> selected_true;   // intersection
  std::vector<std::size_t> selected_false;  // selected but not in truth
  std::vector<std::pair<std::size_t, double>> missed_true;  // (index, |true coefficient|)
};

struct OverlapReport {
  BlockOverlap gamma;
  BlockOverlap delta;
};

OverlapReport truth_overlap_report(const std::vector<double>& inclusion_gamma,
                                   const std::vector<double>& inclusion_delta,
                                   const ModelState& truth);
OverlapReport truth_overlap_report(const ChainOutput& chain, const ModelState& truth);
nlohmann::json overlap_to_json(const OverlapReport& r);

}  // namespace zicomp
