#include "zicomp/checkpoint.hpp"

#include <fstream>

#include "zicomp/dataset_io.hpp"
#include "zicomp/errors.hpp"

namespace zicomp {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
    rows.push_back(r);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto m = n ? static_cast<Eigen::Index>(rows[0].size()) : 0;
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(r.size()) != m) throw ValidationError("ragged matrix in checkpoint");
    for (Eigen::Index k = 0; k < m; ++k) out(i, k) = r[static_cast<std::size_t>(k)];
  }
  return out;
}

json lap_to_json(const LapState& l) {
  return {{"log_scale", l.log_scale},
          {"cov", matrix_to_json(l.cov)},
          {"chol", matrix_to_json(l.chol)},
          {"adapt_iter", l.adapt_iter},
          {"frozen", l.frozen},
          {"batch_count", l.batch_count},
          {"batch_accepts", l.batch_accepts},
          {"batch_sum", vector_to_json(l.batch_sum)},
          {"batch_outer", matrix_to_json(l.batch_outer)}};
}

LapState lap_from_json(const json& j) {
  LapState l;
  l.log_scale = j.at("log_scale").get<double>();
  l.cov = matrix_from_json(j.at("cov"));
  l.chol = matrix_from_json(j.at("chol"));
  l.adapt_iter = j.at("adapt_iter").get<std::size_t>();
  l.frozen = j.at("frozen").get<bool>();
  l.batch_count = j.at("batch_count").get<std::size_t>();
  l.batch_accepts = j.at("batch_accepts").get<std::size_t>();
  l.batch_sum = vector_from_json(j.at("batch_sum"));
  l.batch_outer = matrix_from_json(j.at("batch_outer"));
  return l;
}

}  // namespace

json checkpoint_to_json(const Checkpoint& cp) {
  json j;
  j["format"] = "zicomp.checkpoint/" + std::to_string(Checkpoint::kVersion);
  j["state"] = state_to_json(cp.state);
  // 64-bit words as strings: JSON readers elsewhere may round large integers.
  std::vector<std::string> rng;
  for (auto w : cp.rng) rng.push_back(std::to_string(w));
  j["rng"] = rng;
  j["iteration"] = cp.iteration;
  j["lap"] = json::array();
  for (const auto& l : cp.lap) j["lap"].push_back(lap_to_json(l));
  for (const auto& [k, v] : cp.acceptance) {
    j["acceptance"][k] = {{"attempts", v.attempts}, {"accepts", v.accepts}};
  }
  j["draws"] = cp.draws;
  j["w_sum"] = cp.w_sum;
  j["aux_failures"] = cp.aux_failures;
  j["guard_rejections"] = cp.guard_rejections;
  j["seed"] = std::to_string(cp.seed);
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  const std::string expected = "zicomp.checkpoint/" + std::to_string(Checkpoint::kVersion);
  if (j.value("format", "") != expected) throw ValidationError("unsupported checkpoint format");
  Checkpoint cp;
  cp.state = state_from_json(j.at("state"));
  const auto rng = j.at("rng").get<std::vector<std::string>>();
  if (rng.size() != cp.rng.size()) throw ValidationError("checkpoint rng state has wrong size");
  for (std::size_t i = 0; i < rng.size(); ++i) cp.rng[i] = std::stoull(rng[i]);
  cp.iteration = j.at("iteration").get<std::size_t>();
  const auto& lap = j.at("lap");
  if (lap.size() != kBlockCount) throw ValidationError("checkpoint lap state has wrong size");
  for (std::size_t b = 0; b < kBlockCount; ++b) cp.lap[b] = lap_from_json(lap[b]);
  if (j.contains("acceptance")) {
    for (const auto& [k, v] : j.at("acceptance").items()) {
      cp.acceptance[k] = {v.at("attempts").get<std::uint64_t>(), v.at("accepts").get<std::uint64_t>()};
    }
  }
  cp.draws = j.at("draws").get<std::vector<std::vector<double>>>();
  cp.w_sum = j.at("w_sum").get<std::vector<double>>();
  cp.aux_failures = j.at("aux_failures").get<std::uint64_t>();
  cp.guard_rejections = j.at("guard_rejections").get<std::uint64_t>();
  cp.seed = std::stoull(j.at("seed").get<std::string>());
  return cp;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    // max_digits10 round trip is what nlohmann uses for doubles.
    out << checkpoint_to_json(cp).dump();
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return checkpoint_from_json(json::parse(in));
}

json chain_config_to_json(const ChainConfig& c) {
  json j;
  j["n_iterations"] = c.n_iterations;
  j["burn_in"] = c.burn_in_iterations();
  j["thin"] = c.thin;
  j["seed"] = c.seed;
  j["indicator_schedule"] =
      c.indicator_schedule == IndicatorSchedule::every_k ? "every_k" : "random_m";
  j["indicator_period"] = c.indicator_period;
  j["indicators_per_iteration"] = c.indicators_per_iteration;
  j["lap"] = {{"target_rate", c.lap.target_rate},
              {"interval", c.lap.interval},
              {"c0", c.lap.c0},
              {"c1", c.lap.c1},
              {"jitter", c.lap.jitter}};
  j["initial_variance"] = c.initial_variance;
  j["rho"] = c.rho;
  j["q"] = c.q;
  j["tol"] = c.tol;
  j["zip"] = c.zip;
  j["tractable_poisson"] = c.tractable_poisson;
  j["threads"] = c.threads;
  j["max_abs_log_eta"] = c.max_abs_log_eta;
  j["max_abs_log_nu"] = c.max_abs_log_nu;
  j["progress_every"] = c.progress_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["checkpoint_path"] = c.checkpoint_path.string();
  return j;
}

ChainConfig chain_config_from_json(const json& j) {
  ChainConfig c;
  c.n_iterations = j.value("n_iterations", c.n_iterations);
  if (j.contains("burn_in")) c.burn_in = j.at("burn_in").get<std::size_t>();
  c.thin = j.value("thin", c.thin);
  c.seed = j.value("seed", c.seed);
  const std::string sched = j.value("indicator_schedule", std::string("every_k"));
  if (sched == "every_k") {
    c.indicator_schedule = IndicatorSchedule::every_k;
  } else if (sched == "random_m") {
    c.indicator_schedule = IndicatorSchedule::random_m;
  } else {
    throw ValidationError("unknown indicator_schedule " + sched);
  }
  c.indicator_period = j.value("indicator_period", c.indicator_period);
  c.indicators_per_iteration = j.value("indicators_per_iteration", c.indicators_per_iteration);
  if (j.contains("lap")) {
    const auto& l = j.at("lap");
    c.lap.target_rate = l.value("target_rate", c.lap.target_rate);
    c.lap.interval = l.value("interval", c.lap.interval);
    c.lap.c0 = l.value("c0", c.lap.c0);
    c.lap.c1 = l.value("c1", c.lap.c1);
    c.lap.jitter = l.value("jitter", c.lap.jitter);
  }
  if (j.contains("initial_variance")) {
    c.initial_variance = j.at("initial_variance").get<std::array<double, kBlockCount>>();
  }
  c.rho = j.value("rho", c.rho);
  c.q = j.value("q", c.q);
  c.tol = j.value("tol", c.tol);
  c.zip = j.value("zip", c.zip);
  c.tractable_poisson = j.value("tractable_poisson", c.tractable_poisson);
  c.threads = j.value("threads", c.threads);
  c.max_abs_log_eta = j.value("max_abs_log_eta", c.max_abs_log_eta);
  c.max_abs_log_nu = j.value("max_abs_log_nu", c.max_abs_log_nu);
  c.progress_every = j.value("progress_every", c.progress_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.checkpoint_path = j.value("checkpoint_path", std::string());
  c.validate();
  return c;
}

}  // namespace zicomp
