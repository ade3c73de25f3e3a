#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "zicomp/checkpoint.hpp"
#include "zicomp/dataset_io.hpp"
#include "zicomp/diagnostics.hpp"
#include "zicomp/errors.hpp"
#include "zicomp/graph_basis.hpp"
#include "zicomp/mcmc.hpp"
#include "zicomp/sim_harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace zicomp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitMissing = 4;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".zicomp_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw IoError("output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

void require(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifact("missing artifact " + p.string());
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string preset = "desk-full";
  std::string config;
  std::optional<std::uint64_t> seed;
  std::uint64_t data_seed = 1;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
  ScenarioSpec spec = a.config.empty() ? scenario_preset(a.preset)
                                       : scenario_spec_from_json(read_json(a.config));
  if (a.seed) spec.seed = *a.seed;
  const fs::path out = a.out;
  ensure_dir(out);
  const Scenario sc = make_scenario(spec);
  const Dataset data = simulate_scenario_data(sc, derive_seed(a.data_seed, 0));
  {
    auto f = open_out(out / "data.csv");
    write_dataset_csv(f, data);
  }
  {
    auto f = open_out(out / "graph.txt");
    write_graph(f, sc.graph);
  }
  {
    json truth = state_to_json(sc.truth);
    truth["scenario"] = scenario_spec_to_json(spec);
    auto f = open_out(out / "truth.json");
    f << truth.dump(2) << "\n";
  }
  {
    json cfg = scenario_spec_to_json(spec);
    cfg["data_seed"] = a.data_seed;
    auto f = open_out(out / "config.json");
    f << cfg.dump(2) << "\n";
  }
  std::size_t observed = 0, zeros = 0;
  for (auto y : data.y) {
    if (y == kMissing) continue;
    ++observed;
    zeros += y == 0;
  }
  std::cout << json{{"cells", data.cells()},
                    {"observed", observed},
                    {"zeros", zeros},
                    {"scenario", scenario_name(spec.id)},
                    {"out", out.string()}}
                   .dump()
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string config;
  std::string data;
  std::string graph;
  std::string out;
  std::string resume;
  std::string basis_cache;
  std::optional<std::size_t> iterations, burn_in, thin, q, checkpoint_every;
  std::optional<std::uint64_t> seed;
  std::optional<double> rho;
  std::optional<int> threads;
  bool zip = false;
  bool standardize = false;
};

struct RunConfig {
  fs::path data, graph, out, basis_cache;
  ChainConfig chain;
  PriorConfig prior;
  CsvOptions csv;
};

json run_config_to_json(const RunConfig& r) {
  return {{"format", "zicomp.run/1"},
          {"data", fs::absolute(r.data).string()},
          {"graph", fs::absolute(r.graph).string()},
          {"out", fs::absolute(r.out).string()},
          {"basis_cache", r.basis_cache.empty() ? "" : fs::absolute(r.basis_cache).string()},
          {"chain", chain_config_to_json(r.chain)},
          {"prior", prior_to_json(r.prior)},
          {"csv",
           {{"reference_month", r.csv.reference_month},
            {"first_month", r.csv.first_month},
            {"standardize", r.csv.standardize}}}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig r;
  r.data = j.value("data", "");
  r.graph = j.value("graph", "");
  r.out = j.value("out", "");
  r.basis_cache = j.value("basis_cache", "");
  if (j.contains("chain")) r.chain = chain_config_from_json(j.at("chain"));
  if (j.contains("prior")) r.prior = prior_from_json(j.at("prior"));
  if (j.contains("csv")) {
    const auto& c = j.at("csv");
    r.csv.reference_month = c.value("reference_month", 0);
    r.csv.first_month = c.value("first_month", 0);
    r.csv.standardize = c.value("standardize", false);
  }
  return r;
}

BasisSet obtain_basis(const RunConfig& rc, const AdjacencyGraph& g) {
  if (!rc.basis_cache.empty()) return load_or_compute_basis(rc.basis_cache, g, rc.chain.rho, rc.chain.q);
  return build_basis(g, rc.chain.rho, rc.chain.q);
}

int cmd_fit(const FitArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : run_config_from_json(read_json(a.config));
  if (!a.data.empty()) rc.data = a.data;
  if (!a.graph.empty()) rc.graph = a.graph;
  if (!a.out.empty()) rc.out = a.out;
  if (!a.basis_cache.empty()) rc.basis_cache = a.basis_cache;
  if (a.iterations) rc.chain.n_iterations = *a.iterations;
  if (a.burn_in) rc.chain.burn_in = *a.burn_in;
  if (a.thin) rc.chain.thin = *a.thin;
  if (a.q) rc.chain.q = *a.q;
  if (a.rho) rc.chain.rho = *a.rho;
  if (a.seed) rc.chain.seed = *a.seed;
  if (a.threads) rc.chain.threads = *a.threads;
  if (a.checkpoint_every) rc.chain.checkpoint_every = *a.checkpoint_every;
  if (a.zip) rc.chain.zip = true;
  if (a.standardize) rc.csv.standardize = true;
  if (rc.data.empty() || rc.graph.empty() || rc.out.empty()) {
    throw ValidationError("fit needs --data, --graph and --out (or a config providing them)");
  }
  require(rc.data);
  require(rc.graph);
  ensure_dir(rc.out);
  if (rc.chain.checkpoint_path.empty()) rc.chain.checkpoint_path = rc.out / "checkpoint.json";
  const AdjacencyGraph g = load_graph(rc.graph);
  const Dataset data = read_dataset_csv(rc.data, g, rc.csv);
  if (rc.chain.q == 0) rc.chain.q = std::min<std::size_t>(50, g.size() - 1);
  rc.chain.validate();
  const BasisSet basis = obtain_basis(rc, g);
  {
    auto f = open_out(rc.out / "config.json");
    f << run_config_to_json(rc).dump(2) << "\n";
  }

  HybridSampler sampler(data, basis, rc.prior, rc.chain);
  if (!a.resume.empty()) {
    require(a.resume);
    sampler.restore(read_checkpoint(a.resume));
  } else {
    sampler.initialize();
  }
  std::ofstream progress(rc.out / "progress.jsonl", a.resume.empty() ? std::ios::trunc : std::ios::app);
  ChainOutput out;
  try {
    out = sampler.run(&progress);
  } catch (const ChainAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (!e.checkpoint().empty()) std::cerr << "checkpoint: " << e.checkpoint().string() << "\n";
    return kExitNumeric;
  }
  write_checkpoint(rc.chain.checkpoint_path, sampler.checkpoint());
  {
    auto f = open_out(rc.out / "samples.csv");
    write_samples_csv(f, out);
  }
  json meta;
  meta["format"] = "zicomp.chain/1";
  meta["n_iterations"] = out.n_iterations;
  meta["burn_in"] = out.burn_in;
  meta["thin"] = out.thin;
  meta["seed"] = out.seed;
  meta["samples"] = out.sample_count();
  meta["aux_failures"] = out.aux_failures;
  meta["guard_rejections"] = out.guard_rejections;
  for (const auto& [k, v] : out.acceptance) {
    meta["acceptance"][k] = {{"attempts", v.attempts}, {"accepts", v.accepts}, {"rate", v.rate()}};
  }
  for (const auto& [k, v] : out.timing_seconds) meta["timing_seconds"][k] = v;
  for (const auto& [k, v] : out.mcse) meta["mcse"][k] = {{"mcse", v.mcse}, {"batches", v.batches}};
  meta["w_mean"] = out.w_mean;
  meta["final_state"] = state_to_json(out.final_state);
  {
    auto f = open_out(rc.out / "chain.json");
    f << meta.dump() << "\n";
  }
  std::cout << json{{"samples", out.sample_count()}, {"out", rc.out.string()}}.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

ChainOutput load_samples(const fs::path& run) {
  const fs::path p = run / "samples.csv";
  require(p);
  std::ifstream in(p);
  return read_samples_csv(in);
}

int cmd_summarize(const std::string& run, double level) {
  const fs::path dir = run;
  const ChainOutput chain = load_samples(dir);
  const SummaryTable table = summarize(chain, level);
  {
    auto f = open_out(dir / "summary.csv");
    write_summary_csv(f, table, level);
  }
  {
    auto f = open_out(dir / "inclusion.csv");
    write_inclusion_csv(f, chain);
  }
  {
    auto f = open_out(dir / "schema.txt");
    f << output_schema();
  }
  write_summary_csv(std::cout, table, level);
  return kExitOk;
}

struct DiagnoseArgs {
  std::string run;
  bool rqr = false;
  std::size_t predictive = 0;
  std::uint64_t seed = 1;
  double level = 0.95;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  const fs::path dir = a.run;
  require(dir / "config.json");
  const ChainOutput chain = load_samples(dir);
  const RunConfig rc = run_config_from_json(read_json(dir / "config.json"));
  require(rc.data);
  require(rc.graph);
  const AdjacencyGraph g = load_graph(rc.graph);
  const Dataset data = read_dataset_csv(rc.data, g, rc.csv);
  const BasisSet basis = obtain_basis(rc, g);
  json report;
  {
    auto f = open_out(dir / "summary.csv");
    write_summary_csv(f, summarize(chain, a.level), a.level);
  }
  {
    auto f = open_out(dir / "inclusion.csv");
    write_inclusion_csv(f, chain);
  }
  if (chain.draws.empty()) throw MissingArtifact("chain has no recorded draws");
  if (a.rqr) {
    ModelState fit = posterior_median_state(chain);
    fit.w.assign(data.cells(), 1);
    if (rc.chain.zip) fit = zip_mode(fit);
    const Predictors pred(fit, data, basis);
    const RqrSet r = rqr(data, pred, a.seed, rc.chain.tol, rc.chain.threads);
    auto f = open_out(dir / "rqr.csv");
    write_rqr_csv(f, data, r);
    report["rqr"] = {{"cells", r.residual.size()}, {"finite", r.finite()}, {"infinite", r.infinite}};
  }
  if (a.predictive) {
    const PredictiveMean pm =
        posterior_predictive_mean(chain, data, basis, a.predictive, a.seed, rc.chain.threads);
    auto f = open_out(dir / "predictive.csv");
    write_predictive_csv(f, data, pm);
    report["predictive_draws"] = a.predictive;
  }
  {
    auto f = open_out(dir / "schema.txt");
    f << output_schema();
  }
  std::cout << report.dump() << "\n";
  return kExitOk;
}

struct StudyArgs {
  std::string preset = "desk-full";
  std::size_t reps = 20;
  std::size_t iterations = 20000;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool zip = false;
};

int cmd_study(const StudyArgs& a) {
  ScenarioSpec spec = scenario_preset(a.preset);
  if (a.seed) spec.seed = *a.seed;
  const Scenario sc = make_scenario(spec);
  ChainConfig cfg;
  cfg.n_iterations = a.iterations;
  cfg.q = spec.q_fit;
  cfg.rho = spec.rho;
  cfg.zip = a.zip;
  cfg.progress_every = 0;
  StudyOptions opts;
  opts.log = &std::cerr;
  if (!a.out.empty()) {
    ensure_dir(a.out);
    opts.output_dir = a.out;
  }
  const StudyReport r = run_replicates(sc, a.reps, cfg, PriorConfig{}, opts);
  std::cout << study_report_to_json(r).dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-inflated COMP spatiotemporal regression: simulate, fit, summarize, diagnose"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate a scenario dataset");
  s->add_option("--preset", sim.preset, "large-<scenario> or desk-<scenario>")->capture_default_str();
  s->add_option("--config", sim.config, "Scenario JSON (overrides the preset)");
  s->add_option("--seed", sim.seed, "Scenario (truth) seed");
  s->add_option("--data-seed", sim.data_seed, "Seed for the simulated counts")->capture_default_str();
  s->add_option("--out", sim.out, "Output directory")->required();

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Run the hybrid sampler");
  f->add_option("--config", fit.config, "Run configuration JSON (e.g. an echoed config.json)");
  f->add_option("--data", fit.data, "Dataset CSV");
  f->add_option("--graph", fit.graph, "Graph file");
  f->add_option("--out", fit.out, "Output directory");
  f->add_option("--resume", fit.resume, "Checkpoint to continue from");
  f->add_option("--basis-cache", fit.basis_cache, "Directory for cached eigenbases");
  f->add_option("--iterations", fit.iterations);
  f->add_option("--burn-in", fit.burn_in);
  f->add_option("--thin", fit.thin);
  f->add_option("--q", fit.q, "Number of basis vectors");
  f->add_option("--rho", fit.rho, "CAR dependence parameter");
  f->add_option("--seed", fit.seed);
  f->add_option("--threads", fit.threads);
  f->add_option("--checkpoint-every", fit.checkpoint_every);
  f->add_flag("--zip", fit.zip, "Fit the zero-inflated Poisson model (nu = 1)");
  f->add_flag("--standardize", fit.standardize, "Standardize covariates");

  std::string sum_run;
  double sum_level = 0.95;
  auto* su = app.add_subcommand("summarize", "Posterior summary and inclusion tables");
  su->add_option("--run", sum_run, "Fit output directory")->required();
  su->add_option("--level", sum_level, "HPD level")->capture_default_str()->check(CLI::Range(0.0, 1.0));

  DiagnoseArgs diag;
  auto* d = app.add_subcommand("diagnose", "Residuals and posterior predictive means");
  d->add_option("--run", diag.run, "Fit output directory")->required();
  d->add_flag("--rqr", diag.rqr, "Randomized quantile residuals at the posterior median");
  d->add_option("--predictive", diag.predictive, "Posterior predictive draws (0 = skip)");
  d->add_option("--seed", diag.seed)->capture_default_str();
  d->add_option("--level", diag.level, "HPD level")->capture_default_str()->check(CLI::Range(0.0, 1.0));

  StudyArgs study;
  auto* st = app.add_subcommand("study", "Replicate coverage study on a simulated scenario");
  st->add_option("--preset", study.preset)->capture_default_str();
  st->add_option("--reps", study.reps)->capture_default_str();
  st->add_option("--iterations", study.iterations)->capture_default_str();
  st->add_option("--seed", study.seed);
  st->add_option("--out", study.out);
  st->add_flag("--zip", study.zip);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return cmd_simulate(sim);
    if (*f) return cmd_fit(fit);
    if (*su) return cmd_summarize(sum_run, sum_level);
    if (*d) return cmd_diagnose(diag);
    if (*st) return cmd_study(study);
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissing;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
