#include "zicomp/sim_harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "zicomp/checkpoint.hpp"
#include "zicomp/dataset_io.hpp"
#include "zicomp/errors.hpp"

namespace zicomp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::array<double, kMonthDummies> kTrueZeta{0, 0, 0, 0, 0, 0, 0.1, 0.2, 0.5, 0.4, 0.3};

}  // namespace

const char* scenario_name(ScenarioId id) {
  switch (id) {
    case ScenarioId::full: return "full";
    case ScenarioId::const_dispersion: return "const_dispersion";
    case ScenarioId::fixed_only: return "fixed_only";
    case ScenarioId::covariate_only: return "covariate_only";
  }
  return "?";
}

ScenarioId parse_scenario(const std::string& name) {
  for (auto id : {ScenarioId::full, ScenarioId::const_dispersion, ScenarioId::fixed_only,
                  ScenarioId::covariate_only}) {
    if (name == scenario_name(id)) return id;
  }
  throw ValidationError("unknown scenario '" + name + "'");
}

ScenarioSpec scenario_preset(const std::string& name) {
  ScenarioSpec s;
  std::string rest;
  if (name.rfind("large-", 0) == 0) {
    s.rows = s.cols = 30;
    s.T = 24;
    s.q_true = 25;
    s.q_fit = 50;
    rest = name.substr(6);
  } else if (name.rfind("desk-", 0) == 0) {
    rest = name.substr(5);
  } else {
    throw ValidationError("unknown preset '" + name + "' (expected large-<scenario> or desk-<scenario>)");
  }
  s.id = parse_scenario(rest);
  return s;
}

nlohmann::json scenario_spec_to_json(const ScenarioSpec& s) {
  return {{"format", "zicomp.scenario/1"},
          {"scenario", scenario_name(s.id)},
          {"rows", s.rows},
          {"cols", s.cols},
          {"T", s.T},
          {"q_true", s.q_true},
          {"q_fit", s.q_fit},
          {"seed", s.seed},
          {"rho", s.rho},
          {"redraw_per_replicate", s.redraw_per_replicate}};
}

ScenarioSpec scenario_spec_from_json(const nlohmann::json& j) {
  ScenarioSpec s;
  if (j.contains("preset")) s = scenario_preset(j.at("preset").get<std::string>());
  if (j.contains("scenario")) s.id = parse_scenario(j.at("scenario").get<std::string>());
  s.rows = j.value("rows", s.rows);
  s.cols = j.value("cols", s.cols);
  s.T = j.value("T", s.T);
  s.q_true = j.value("q_true", s.q_true);
  s.q_fit = j.value("q_fit", s.q_fit);
  s.seed = j.value("seed", s.seed);
  s.rho = j.value("rho", s.rho);
  s.redraw_per_replicate = j.value("redraw_per_replicate", s.redraw_per_replicate);
  return s;
}

Eigen::VectorXd draw_basis_coefficients(const BasisSet& basis, std::size_t q_true,
                                        double precision, Rng& rng) {
  if (q_true > basis.q()) throw ValidationError("q_true exceeds the basis dimension");
  const auto qt = static_cast<Eigen::Index>(q_true);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.q()));
  if (q_true == 0) return out;
  const Eigen::MatrixXd Qt = basis.Q_B.topLeftCorner(qt, qt) * precision;
  Eigen::LLT<Eigen::MatrixXd> llt(Qt);
  if (llt.info() != Eigen::Success) throw NumericError("Q_B is not positive definite");
  Eigen::VectorXd z(qt);
  for (Eigen::Index k = 0; k < qt; ++k) z(k) = rng.normal();
  // Q = L L' so L'^{-1} z has covariance Q^{-1}.
  out.head(qt) = llt.matrixU().solve(z);
  return out;
}

std::uint64_t replicate_data_seed(std::uint64_t base, std::size_t rep) {
  return derive_seed(base, rep, 1);
}
std::uint64_t replicate_chain_seed(std::uint64_t base, std::size_t rep) {
  return derive_seed(base, rep, 2);
}
std::uint64_t replicate_truth_seed(std::uint64_t base, std::size_t rep) {
  return derive_seed(base, rep, 3);
}

namespace {

ModelState scenario_truth(const ScenarioSpec& spec, const BasisSet& basis, std::uint64_t seed,
                          std::size_t cells) {
  ModelState t = ModelState::zeros(cells, 3, spec.q_fit);
  t.beta1 << 0.0, -3.0, 2.0;
  t.beta2 << 2.0, -0.5, 1.0;
  for (int k = 0; k < kMonthDummies; ++k) t.zeta(k) = kTrueZeta[static_cast<std::size_t>(k)];
  t.alpha = -0.3;
  t.kappa = 1.0;
  t.tau = 1.0;
  std::fill(t.I_gamma.begin(), t.I_gamma.end(), 0);
  std::fill(t.I_delta.begin(), t.I_delta.end(), 0);
  Rng rng(derive_seed(seed, 0x7275746855ULL));
  const bool spatial_eta = spec.id == ScenarioId::full || spec.id == ScenarioId::const_dispersion;
  const bool spatial_nu = spec.id == ScenarioId::full;
  // Both fields are always drawn so γ does not depend on the scenario id.
  const Eigen::VectorXd g = draw_basis_coefficients(basis, spec.q_true, t.kappa, rng);
  const Eigen::VectorXd d = draw_basis_coefficients(basis, spec.q_true, t.tau, rng);
  if (spatial_eta) {
    t.gamma = g;
    for (std::size_t j = 0; j < spec.q_true; ++j) t.I_gamma[j] = 1;
  }
  if (spatial_nu) {
    t.delta = d;
    for (std::size_t j = 0; j < spec.q_true; ++j) t.I_delta[j] = 1;
  }
  if (spec.id == ScenarioId::covariate_only) t.zeta.setZero();
  return t;
}

}  // namespace

Scenario make_scenario(const ScenarioSpec& spec) {
  if (spec.q_true > spec.q_fit) throw ValidationError("q_true exceeds q_fit");
  if (spec.T == 0) throw ValidationError("T must be positive");
  Scenario sc;
  sc.spec = spec;
  sc.graph = build_lattice(spec.rows, spec.cols);
  sc.basis = build_basis(sc.graph, spec.rho, spec.q_fit);

  Dataset& d = sc.design;
  d.n = sc.graph.size();
  d.T = spec.T;
  d.graph = sc.graph;
  d.y.assign(d.cells(), 0);
  d.X = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(d.cells()), 3);
  const double cx = spec.cols > 1 ? static_cast<double>(spec.cols - 1) : 1.0;
  const double ry = spec.rows > 1 ? static_cast<double>(spec.rows - 1) : 1.0;
  for (std::size_t s = 0; s < d.n; ++s) {
    const double x = static_cast<double>(s % spec.cols) / cx;
    const double y = static_cast<double>(s / spec.cols) / ry;
    for (std::size_t t = 0; t < d.T; ++t) {
      const auto c = static_cast<Eigen::Index>(d.cell(s, t));
      d.X(c, 1) = x;
      d.X(c, 2) = y;
    }
  }
  d.M = month_dummies(d.T);
  d.validate();
  sc.truth = scenario_truth(spec, sc.basis, spec.seed, d.cells());
  return sc;
}

Dataset simulate_scenario_data(const Scenario& sc, const ModelState& truth, std::uint64_t seed) {
  Dataset d = sc.design;
  const SimulatedCounts sim = simulate_dataset(truth, d, sc.basis, seed);
  d.y = sim.y;
  return d;
}

Dataset simulate_scenario_data(const Scenario& sc, std::uint64_t seed) {
  return simulate_scenario_data(sc, sc.truth, seed);
}

std::vector<std::string> identifiable_fixed_effects(const Scenario& sc, bool zip) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < sc.design.p(); ++k) out.push_back("beta1_" + std::to_string(k));
  for (std::size_t k = 0; k < sc.design.p(); ++k) out.push_back("beta2_" + std::to_string(k));
  for (int k = 0; k < kMonthDummies; ++k) {
    if (sc.design.M.col(k).cwiseAbs().maxCoeff() > 0.0) out.push_back("zeta_" + std::to_string(k));
  }
  if (!zip) out.push_back("alpha");
  return out;
}

double truth_value(const ModelState& truth, const std::string& column) {
  const auto cols = sample_columns(static_cast<std::size_t>(truth.beta1.size()),
                                   static_cast<std::size_t>(truth.gamma.size()));
  const auto row = flatten_state(truth);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] == column) return row[k];
  }
  throw ValidationError("unknown parameter " + column);
}

double ParameterRate::coverage() const {
  return replicates ? static_cast<double>(covered) / static_cast<double>(replicates) : kNaN;
}

double StudyReport::pooled_coverage() const {
  std::size_t n = 0, c = 0;
  for (const auto& p : parameters) {
    n += p.replicates;
    c += p.covered;
  }
  return n ? static_cast<double>(c) / static_cast<double>(n) : kNaN;
}

double StudyReport::pooled_type1() const {
  std::size_t n = 0, e = 0;
  for (const auto& p : parameters) {
    if (p.truth != 0.0) continue;
    n += p.replicates;
    e += p.type1;
  }
  return n ? static_cast<double>(e) / static_cast<double>(n) : kNaN;
}

double StudyReport::pooled_type2() const {
  std::size_t n = 0, e = 0;
  for (const auto& p : parameters) {
    if (p.truth == 0.0) continue;
    n += p.replicates;
    e += p.type2;
  }
  return n ? static_cast<double>(e) / static_cast<double>(n) : kNaN;
}

StudyReport run_replicates(const Scenario& sc, std::size_t n_reps, const ChainConfig& cfg,
                           const PriorConfig& prior, const StudyOptions& opts) {
  if (n_reps < 1) throw ValidationError("n_reps must be >= 1");
  StudyReport report;
  report.scenario = scenario_name(sc.spec.id);
  report.replicates = n_reps;
  report.level = opts.level;
  const auto names = identifiable_fixed_effects(sc, cfg.zip);
  for (const auto& n : names) report.parameters.push_back({n, 0.0, 0, 0, 0, 0});

  for (std::size_t r = 0; r < n_reps; ++r) {
    ReplicateResult rr;
    rr.replicate = r;
    rr.data_seed = replicate_data_seed(sc.spec.seed, r);
    rr.chain_seed = replicate_chain_seed(sc.spec.seed, r);
    rr.truth = sc.spec.redraw_per_replicate
                   ? scenario_truth(sc.spec, sc.basis, replicate_truth_seed(sc.spec.seed, r),
                                    sc.design.cells())
                   : sc.truth;
    const auto start = std::chrono::steady_clock::now();
    try {
      const Dataset data = simulate_scenario_data(sc, rr.truth, rr.data_seed);
      ChainConfig c = cfg;
      c.seed = rr.chain_seed;
      std::filesystem::path dir;
      if (!opts.output_dir.empty()) {
        dir = opts.output_dir / ("rep_" + std::to_string(r));
        std::filesystem::create_directories(dir);
        if (c.checkpoint_every) c.checkpoint_path = dir / "checkpoint.json";
      }
      std::optional<ModelState> init;
      if (opts.start_at_truth) {
        ModelState s = rr.truth;
        s.w.assign(data.cells(), 1);
        for (std::size_t k = 0; k < data.cells(); ++k) {
          if (data.missing(k)) s.w[k] = 0;
        }
        init = s;
      }
      const ChainOutput out = run_chain(data, sc.basis, prior, c, init);
      rr.aux_failures = out.aux_failures;
      if (!out.draws.empty()) {
        rr.summary = summarize(out, opts.level);
        for (const auto& inc : inclusion_probabilities(out.inclusion_traces("gamma"))) {
          rr.inclusion_gamma.push_back(inc.probability);
        }
        for (const auto& inc : inclusion_probabilities(out.inclusion_traces("delta"))) {
          rr.inclusion_delta.push_back(inc.probability);
        }
        rr.ok = true;
      } else {
        rr.error = "no recorded draws";
      }
      if (!dir.empty()) {
        std::ofstream sum(dir / "summary.csv");
        write_summary_csv(sum, rr.summary, opts.level);
        std::ofstream inc(dir / "inclusion.csv");
        write_inclusion_csv(inc, out);
        std::ofstream ds(dir / "data.csv");
        write_dataset_csv(ds, data);
      }
    } catch (const std::exception& e) {
      rr.ok = false;
      rr.error = e.what();
    }
    rr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!rr.ok) ++report.failures;
    if (rr.ok) {
      for (auto& pr : report.parameters) {
        const double truth = truth_value(rr.truth, pr.name);
        pr.truth = truth;
        for (const auto& row : rr.summary) {
          if (row.name != pr.name) continue;
          ++pr.replicates;
          if (row.hpd_lo <= truth && truth <= row.hpd_hi) ++pr.covered;
          const bool has_zero = row.hpd_lo <= 0.0 && 0.0 <= row.hpd_hi;
          if (truth == 0.0 && !has_zero) ++pr.type1;
          if (truth != 0.0 && has_zero) ++pr.type2;
        }
      }
    }
    if (opts.log) {
      *opts.log << "replicate " << r << (rr.ok ? " ok" : " failed: " + rr.error) << " ("
                << rr.seconds << " s)\n";
      opts.log->flush();
    }
    report.runs.push_back(std::move(rr));
  }
  report.degenerate = report.failures == n_reps;
  if (!opts.output_dir.empty()) {
    std::ofstream j(opts.output_dir / "report.json");
    j << study_report_to_json(report).dump(2) << "\n";
    std::ofstream c(opts.output_dir / "report.csv");
    write_study_report_csv(c, report);
  }
  return report;
}

nlohmann::json study_report_to_json(const StudyReport& r) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  nlohmann::json j;
  j["format"] = "zicomp.study/1";
  j["scenario"] = r.scenario;
  j["replicates"] = r.replicates;
  j["failures"] = r.failures;
  j["degenerate"] = r.degenerate;
  j["level"] = r.level;
  j["pooled_coverage"] = num(r.pooled_coverage());
  j["pooled_type1"] = num(r.pooled_type1());
  j["pooled_type2"] = num(r.pooled_type2());
  for (const auto& p : r.parameters) {
    j["parameters"].push_back({{"name", p.name},
                               {"truth", p.truth},
                               {"replicates", p.replicates},
                               {"coverage", num(p.coverage())},
                               {"type1", p.type1},
                               {"type2", p.type2}});
  }
  for (const auto& rr : r.runs) {
    nlohmann::json e{{"replicate", rr.replicate},
                     {"data_seed", rr.data_seed},
                     {"chain_seed", rr.chain_seed},
                     {"ok", rr.ok},
                     {"seconds", rr.seconds},
                     {"aux_failures", rr.aux_failures}};
    if (!rr.error.empty()) e["error"] = rr.error;
    j["runs"].push_back(e);
  }
  return j;
}

void write_study_report_csv(std::ostream& out, const StudyReport& r) {
  out << "# format: zicomp.study/1 scenario=" << r.scenario << " replicates=" << r.replicates
      << " failures=" << r.failures << "\n";
  out << "parameter,truth,replicates,coverage,type1,type2\n";
  for (const auto& p : r.parameters) {
    out << p.name << "," << p.truth << "," << p.replicates << ",";
    if (p.replicates) {
      out << p.coverage();
    } else {
      out << "NA";
    }
    out << "," << p.type1 << "," << p.type2 << "\n";
  }
}

namespace {

BlockOverlap block_overlap(const std::vector<double>& inc, const Eigen::VectorXd& coef,
                           const std::vector<std::uint8_t>& ind) {
  BlockOverlap b;
  for (std::size_t j = 0; j < ind.size(); ++j) {
    const bool sel = j < inc.size() && inc[j] >= 0.5;
    const bool tru = ind[j] != 0;
    if (sel) b.selected.push_back(j);
    if (tru) b.truth.push_back(j);
    if (sel && tru) b.selected_true.push_back(j);
    if (sel && !tru) b.selected_false.push_back(j);
    if (!sel && tru) b.missed_true.emplace_back(j, std::abs(coef(static_cast<Eigen::Index>(j))));
  }
  return b;
}

nlohmann::json block_json(const BlockOverlap& b) {
  nlohmann::json missed = nlohmann::json::array();
  for (const auto& [j, v] : b.missed_true) missed.push_back({{"index", j}, {"abs_truth", v}});
  return {{"selected", b.selected},
          {"truth", b.truth},
          {"selected_true", b.selected_true},
          {"selected_false", b.selected_false},
          {"missed_true", missed}};
}

}  // namespace

OverlapReport truth_overlap_report(const std::vector<double>& inclusion_gamma,
                                   const std::vector<double>& inclusion_delta,
                                   const ModelState& truth) {
  return {block_overlap(inclusion_gamma, truth.gamma, truth.I_gamma),
          block_overlap(inclusion_delta, truth.delta, truth.I_delta)};
}

OverlapReport truth_overlap_report(const ChainOutput& chain, const ModelState& truth) {
  std::vector<double> g, d;
  if (!chain.draws.empty()) {
    for (const auto& i : inclusion_probabilities(chain.inclusion_traces("gamma"))) g.push_back(i.probability);
    for (const auto& i : inclusion_probabilities(chain.inclusion_traces("delta"))) d.push_back(i.probability);
  }
  return truth_overlap_report(g, d, truth);
}

nlohmann::json overlap_to_json(const OverlapReport& r) {
  return {{"gamma", block_json(r.gamma)}, {"delta", block_json(r.delta)}};
}

}  // namespace zicomp
