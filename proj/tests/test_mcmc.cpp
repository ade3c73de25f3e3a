#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "zicomp/checkpoint.hpp"
#include "zicomp/comp_dist.hpp"
#include "zicomp/diagnostics.hpp"
#include "zicomp/errors.hpp"
#include "zicomp/mcmc.hpp"

using namespace zicomp;

namespace {

struct Small {
  AdjacencyGraph g = build_lattice(3, 3);
  BasisSet basis = build_basis(g, 0.99, 3);
  Dataset data;
  explicit Small(bool all_missing = false) {
    data.n = 9;
    data.T = 2;
    data.graph = g;
    data.X = Eigen::MatrixXd::Ones(18, 2);
    for (Eigen::Index c = 0; c < 18; ++c) data.X(c, 1) = static_cast<double>(c % 3) / 2.0;
    data.M = month_dummies(2);
    ModelState truth = ModelState::zeros(18, 2, 3);
    truth.beta1 << 0.5, 1.0;
    truth.beta2 << 1.0, 0.5;
    truth.alpha = 0.2;
    data.y.assign(18, 0);
    data.y = simulate_dataset(truth, data, basis, 3).y;
    if (all_missing) data.y.assign(18, kMissing);
  }
};

ChainConfig small_config(std::size_t n, std::uint64_t seed = 1) {
  ChainConfig c;
  c.n_iterations = n;
  c.seed = seed;
  c.q = 3;
  c.progress_every = 0;
  return c;
}

double stationary_w1(double pi, double eta, double nu) {
  const double c = std::exp(comp_log_normalizer(CompParams(eta, nu)).log_c);
  return pi / c / (pi / c + (1 - pi));
}

WCell cell(double pi, double eta, double nu) {
  return {std::log(pi), std::log1p(-pi), eta, nu, 0.5};
}

}  // namespace

TEST_CASE("block names") {
  CHECK(std::string(block_name(Block::beta1)) == "beta1");
  CHECK(std::string(block_name(Block::delta)) == "delta");
}

TEST_CASE("chain configuration validation") {
  ChainConfig c;
  CHECK_NOTHROW(c.validate());
  c.thin = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ChainConfig{};
  c.indicator_period = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ChainConfig{};
  c.lap.target_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ChainConfig{};
  c.burn_in = c.n_iterations + 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ChainConfig{};
  CHECK(c.burn_in_iterations() == 5000);
  c.tractable_poisson = true;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("chain configuration JSON round trip") {
  ChainConfig c;
  c.n_iterations = 123;
  c.burn_in = 7;
  c.seed = 99;
  c.indicator_schedule = IndicatorSchedule::random_m;
  c.lap.c1 = 0.6;
  c.initial_variance[2] = 0.5;
  c.zip = true;
  const ChainConfig b = chain_config_from_json(chain_config_to_json(c));
  CHECK(b.n_iterations == 123);
  CHECK(b.burn_in_iterations() == 7);
  CHECK(b.seed == 99);
  CHECK(b.indicator_schedule == IndicatorSchedule::random_m);
  CHECK(b.lap.c1 == 0.6);
  CHECK(b.initial_variance[2] == 0.5);
  CHECK(b.zip);
}

TEST_CASE("LAP scale grows under high acceptance and freezes") {
  LapConfig cfg;
  LapState lap = LapState::initial(2, 0.1, cfg);
  double prev = lap.log_scale;
  for (int batch = 0; batch < 10; ++batch) {
    for (std::size_t i = 0; i < cfg.interval; ++i) {
      lap.record(Eigen::Vector2d(static_cast<double>(i), 0.5 * static_cast<double>(i)), true, cfg);
    }
    CHECK(lap.log_scale > prev);
    prev = lap.log_scale;
  }
  lap.frozen = true;
  const Eigen::MatrixXd chol = lap.chol;
  for (int i = 0; i < 500; ++i) lap.record(Eigen::Vector2d(1.0, 2.0), i % 2 == 0, cfg);
  CHECK(lap.log_scale == prev);
  CHECK(lap.chol == chol);

  LapState low = LapState::initial(1, 1.0, cfg);
  const double before = low.log_scale;
  BlockStats st;
  st.acceptance_rate = 0.0;
  adapt_proposal(st, low, cfg);
  CHECK(low.log_scale < before);
}

TEST_CASE("adapted random walk on a Gaussian target reaches the optimal acceptance band") {
  LapConfig cfg;
  const int d = 4;
  Eigen::MatrixXd S(d, d);
  S << 4, 1, 0, 0, 1, 2, 0.5, 0, 0, 0.5, 1, 0.2, 0, 0, 0.2, 0.25;
  const Eigen::MatrixXd P = S.inverse();
  auto logp = [&](const Eigen::VectorXd& x) { return -0.5 * x.dot(P * x); };
  LapState lap = LapState::initial(d, 0.01, cfg);
  Rng rng(17);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
  std::size_t acc = 0, tot = 0;
  for (int it = 0; it < 60000; ++it) {
    if (it == 30000) lap.frozen = true;
    Eigen::VectorXd z(d);
    for (int k = 0; k < d; ++k) z(k) = rng.normal();
    const Eigen::VectorXd y = x + lap.chol * z;
    const bool ok = std::log(rng.uniform()) < logp(y) - logp(x);
    if (ok) x = y;
    lap.record(x, ok, cfg);
    if (lap.frozen) {
      ++tot;
      acc += ok;
    }
  }
  const double rate = static_cast<double>(acc) / static_cast<double>(tot);
  CHECK(rate > 0.18);
  CHECK(rate < 0.30);
}

TEST_CASE("w swap with pi = 0 is never accepted") {
  const WCell c{-INFINITY, 0.0, 2.0, 1.0, 0.5};
  CHECK(w_swap_log_ratio(0, c, 0) == -INFINITY);
  CHECK(w_swap_log_ratio(0, c, 3) == -INFINITY);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(update_w_cell(0, c, rng) == 0);
}

TEST_CASE("single-cell w chain has the closed-form stationary law") {
  struct Case {
    double pi, eta, nu;
  };
  for (const Case k : {Case{0.3, 2.0, 1.0}, Case{0.6, 5.0, 0.3}, Case{0.5, 1.5, 2.5}}) {
    CAPTURE(k.nu);
    const WCell c = cell(k.pi, k.eta, k.nu);
    Rng rng(derive_seed(5, static_cast<std::uint64_t>(k.nu * 10)));
    std::uint8_t w = 0;
    const int n = 200000;
    int ones = 0, up = 0, from0 = 0, down = 0, from1 = 0;
    for (int i = 0; i < n; ++i) {
      const std::uint8_t prev = w;
      w = update_w_cell(w, c, rng);
      ones += w;
      if (prev == 0) {
        ++from0;
        up += w;
      } else {
        ++from1;
        down += 1 - w;
      }
    }
    const double p1 = stationary_w1(k.pi, k.eta, k.nu);
    CHECK(std::abs(static_cast<double>(ones) / n - p1) < 0.01);
    // Detailed balance with the exact stationary probabilities.
    const double p01 = static_cast<double>(up) / from0, p10 = static_cast<double>(down) / from1;
    const double lhs = (1 - p1) * p01, rhs = p1 * p10;
    const double se = std::sqrt((1 - p1) * (1 - p1) * p01 * (1 - p01) / from0 +
                                p1 * p1 * p10 * (1 - p10) / std::max(from1, 1));
    CHECK(std::abs(lhs - rhs) <= 2.0 * se + 1e-12);
    if (k.nu == 0.3) CHECK(p01 > 0.001);
  }
}

TEST_CASE("tractable Poisson w update has the same stationary law") {
  const WCell c = cell(0.3, 2.0, 1.0);
  Rng rng(8);
  std::uint8_t w = 1;
  int ones = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) ones += (w = update_w_cell_poisson(w, c, rng));
  CHECK(std::abs(static_cast<double>(ones) / n - stationary_w1(0.3, 2.0, 1.0)) < 0.01);
}

TEST_CASE("zero-iteration run returns the initial state") {
  Small s;
  HybridSampler a(s.data, s.basis, PriorConfig{}, small_config(0));
  a.initialize();
  const ModelState init = a.state();
  const ChainOutput out = a.run();
  CHECK(out.draws.empty());
  CHECK(out.final_state == init);
  CHECK(out.mcse.empty());
  CHECK(init.beta1.isZero());
  CHECK(init.kappa == 1.0);
  for (std::size_t c = 0; c < 18; ++c) {
    if (s.data.y[c] > 0) CHECK(init.w[c] == 1);
  }
}

TEST_CASE("sample count, w pinning and thinning") {
  Small s;
  ChainConfig c = small_config(103);
  c.burn_in = 10;
  c.thin = 4;
  const ChainOutput out = run_chain(s.data, s.basis, PriorConfig{}, c);
  CHECK(out.sample_count() == 23);
  CHECK(out.columns == sample_columns(2, 3));
  CHECK(out.draws[0].size() == out.columns.size());
  for (std::size_t k = 0; k < 18; ++k) {
    if (s.data.y[k] > 0) {
      CHECK(out.final_state.w[k] == 1);
      CHECK(out.w_mean[k] == 1.0);
    }
  }
  const ModelState last = out.state_at(out.sample_count() - 1);
  CHECK(flatten_state(last) == out.draws.back());
  CHECK(out.acceptance.at("beta2").attempts == 103);
}

TEST_CASE("identical seeds reproduce bit for bit, threads do not matter") {
  Small s;
  const ChainConfig c = small_config(300, 7);
  const ChainOutput a = run_chain(s.data, s.basis, PriorConfig{}, c);
  const ChainOutput b = run_chain(s.data, s.basis, PriorConfig{}, c);
  CHECK(a.same_draws(b));
  ChainConfig ct = c;
  ct.threads = 3;
  const ChainOutput t = run_chain(s.data, s.basis, PriorConfig{}, ct);
  CHECK(a.same_draws(t));
  const ChainOutput other = run_chain(s.data, s.basis, PriorConfig{}, small_config(300, 8));
  CHECK_FALSE(a.same_draws(other));
}

TEST_CASE("resume from checkpoint equals an uninterrupted run") {
  Small s;
  const ChainConfig c = small_config(400, 11);
  const ChainOutput full = run_chain(s.data, s.basis, PriorConfig{}, c);

  ChainConfig partial = c;
  HybridSampler first(s.data, s.basis, PriorConfig{}, partial);
  first.initialize();
  while (first.iteration() < 170) first.step();
  const auto path = std::filesystem::temp_directory_path() / "zicomp_resume_test.json";
  write_checkpoint(path, first.checkpoint());

  HybridSampler second(s.data, s.basis, PriorConfig{}, c);
  second.restore(read_checkpoint(path));
  const ChainOutput resumed = second.run();
  CHECK(resumed.same_draws(full));
  std::filesystem::remove(path);

  ChainConfig wrong = c;
  wrong.seed = 12;
  HybridSampler third(s.data, s.basis, PriorConfig{}, wrong);
  CHECK_THROWS_AS(third.restore(first.checkpoint()), ValidationError);
}

TEST_CASE("adaptation is frozen after burn-in") {
  Small s;
  ChainConfig c = small_config(600);
  c.burn_in = 300;
  HybridSampler h(s.data, s.basis, PriorConfig{}, c);
  h.initialize();
  while (h.iteration() < 301) h.step();
  std::vector<Eigen::MatrixXd> chol;
  for (std::size_t b = 0; b < kBlockCount; ++b) chol.push_back(h.lap(static_cast<Block>(b)).chol);
  while (h.iteration() < 600) h.step();
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    CHECK(h.lap(static_cast<Block>(b)).chol == chol[b]);
    CHECK(h.lap(static_cast<Block>(b)).frozen);
  }
}

TEST_CASE("Gibbs draw for kappa at gamma = 0") {
  Small s;
  HybridSampler h(s.data, s.basis, PriorConfig{}, small_config(1));
  ModelState st = ModelState::zeros(18, 2, 3);
  for (std::size_t c = 0; c < 18; ++c) st.w[c] = s.data.y[c] > 0 ? 1 : 0;
  h.set_state(st);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    h.update_smoothing();
    REQUIRE(h.state().kappa > 0.0);
    REQUIRE(h.state().tau > 0.0);
    sum += h.state().kappa;
  }
  const double want = (0.001 + 3.0 / 2.0) / 1000.0;
  CHECK(std::abs(sum / n / want - 1.0) < 0.01);
}

TEST_CASE("prior-only chain recovers the priors") {
  Small s(true);
  PriorConfig prior;
  // A proper, moderate smoothing prior keeps the joint (gamma, kappa)
  // prior within reach of a random walk.
  prior.smoothing_shape = 3.0;
  prior.smoothing_rate = 3.0;
  ChainConfig c = small_config(60000, 21);
  c.burn_in = 10000;
  const ChainOutput out = run_chain(s.data, s.basis, prior, c);
  for (const std::string name : {"beta1_0", "beta2_1", "zeta_3"}) {
    CAPTURE(name);
    const auto tr = out.column(name);
    const double mean = std::accumulate(tr.begin(), tr.end(), 0.0) / static_cast<double>(tr.size());
    double var = 0.0;
    for (double v : tr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(tr.size() - 1);
    const double se = batch_means_mcse(tr).mcse;
    CHECK(std::abs(mean) < 4.0 * se + 0.05);
    CHECK(var == doctest::Approx(100.0).epsilon(0.2));
  }
  // log nu = alpha + B delta is confined to [-10, 10] on every location.
  for (std::size_t k = 0; k < out.sample_count(); k += 10) {
    const ModelState st = out.state_at(k);
    Eigen::VectorXd d = st.delta;
    for (Eigen::Index j = 0; j < d.size(); ++j) d(j) *= st.I_delta[static_cast<std::size_t>(j)];
    const Eigen::VectorXd lognu = (st.alpha + (s.basis.B * d).array()).matrix();
    REQUIRE(lognu.cwiseAbs().maxCoeff() <= 10.0);
  }
  // kappa * gamma' Q_B gamma is chi-square with q degrees of freedom.
  const auto kappa = out.column("kappa");
  double acc = 0.0;
  for (std::size_t k = 0; k < out.sample_count(); ++k) {
    const ModelState st = out.state_at(k);
    acc += kappa[k] * quad_form_Q_B(st.gamma, s.basis);
  }
  CHECK(acc / static_cast<double>(out.sample_count()) == doctest::Approx(3.0).epsilon(0.15));
  // Indicators of null data follow the Bernoulli(0.1) prior.
  const auto inc = inclusion_probabilities(out.inclusion_traces("gamma"));
  for (const auto& i : inc) CHECK(std::abs(i.probability - 0.1) < 0.05);
}

TEST_CASE("exchange and tractable Poisson chains agree in ZIP mode") {
  Small s;
  ChainConfig c = small_config(40000, 31);
  c.zip = true;
  const ChainOutput ex = run_chain(s.data, s.basis, PriorConfig{}, c);
  c.tractable_poisson = true;
  const ChainOutput tr = run_chain(s.data, s.basis, PriorConfig{}, c);
  CHECK(ex.acceptance.at("alpha").attempts == 0);
  for (const char* name : {"beta1_0", "beta2_0", "beta2_1"}) {
    CAPTURE(name);
    const auto a = ex.column(name), b = tr.column(name);
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    const double se = std::hypot(batch_means_mcse(a).mcse, batch_means_mcse(b).mcse);
    CHECK(std::abs(ma - mb) < 4.0 * se);
  }
}

TEST_CASE("random-m indicator schedule runs and updates indicators") {
  Small s;
  ChainConfig c = small_config(200);
  c.indicator_schedule = IndicatorSchedule::random_m;
  c.indicators_per_iteration = 2;
  const ChainOutput out = run_chain(s.data, s.basis, PriorConfig{}, c);
  CHECK(out.acceptance.at("I_gamma").attempts == 400);
  CHECK(out.acceptance.at("I_delta").attempts == 400);
}

TEST_CASE("progress lines are JSON") {
  Small s;
  ChainConfig c = small_config(20);
  c.progress_every = 10;
  std::ostringstream log;
  run_chain(s.data, s.basis, PriorConfig{}, c, std::nullopt, &log);
  std::istringstream in(log.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("acceptance"));
    CHECK(j.contains("included_gamma"));
    ++lines;
  }
  CHECK(lines == 2);
}
