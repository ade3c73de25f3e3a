#include <doctest.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <cmath>
#include <numeric>
#include <sstream>

#include "zicomp/diagnostics.hpp"
#include "zicomp/errors.hpp"
#include "zicomp/rng.hpp"

using namespace zicomp;

namespace {

std::vector<double> iid_normal(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  return x;
}

std::vector<double> ar1(std::size_t n, double phi, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  double v = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) v = phi * v + rng.normal();
  for (double& e : x) e = v = phi * v + rng.normal();
  return x;
}

struct Lattice {
  AdjacencyGraph g;
  BasisSet basis;
  Dataset data;
  ModelState truth;
  Lattice(std::size_t side, std::size_t T, double beta1_0, std::uint64_t seed)
      : g(build_lattice(side, side)), basis(build_basis(g, 0.99, 2)) {
    const std::size_t n = side * side, cells = n * T;
    data.n = n;
    data.T = T;
    data.graph = g;
    data.X = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(cells), 2);
    for (std::size_t c = 0; c < cells; ++c) data.X(static_cast<Eigen::Index>(c), 1) = static_cast<double>(c % 5) / 4.0;
    data.M = month_dummies(T);
    truth = ModelState::zeros(cells, 2, 2);
    truth.beta1 << beta1_0, 0.0;
    truth.beta2 << 1.5, 0.5;
    truth.alpha = 0.0;
    data.y.assign(cells, 0);
    data.y = simulate_dataset(truth, data, basis, seed).y;
  }
};

ChainOutput fixed_chain(const ModelState& s, std::size_t p, std::size_t q) {
  ChainOutput c;
  c.columns = sample_columns(p, q);
  c.draws = {flatten_state(s)};
  c.final_state = s;
  return c;
}

}  // namespace

TEST_CASE("MCSE of a constant trace is zero") {
  const Mcse m = batch_means_mcse(std::vector<double>(400, 3.25));
  CHECK(m.mcse == 0.0);
  CHECK(m.batches == 20);
}

TEST_CASE("MCSE of iid normals matches 1/sqrt(N)") {
  const auto x = iid_normal(1000000, 3);
  CHECK(batch_means_mcse(x).mcse == doctest::Approx(1e-3).epsilon(0.1));
}

TEST_CASE("MCSE of AR(1) matches the asymptotic variance") {
  const double phi = 0.9;
  const std::size_t n = 1000000;
  const auto x = ar1(n, phi, 4);
  const double want = std::sqrt(1.0 / ((1 - phi) * (1 - phi)) / static_cast<double>(n));
  CHECK(batch_means_mcse(x).mcse == doctest::Approx(want).epsilon(0.15));
}

TEST_CASE("MCSE decays as N^-1/2") {
  const auto x = ar1(1000000, 0.5, 5);
  std::vector<double> lx, ly;
  for (std::size_t n : {10000u, 40000u, 160000u, 640000u}) {
    const std::vector<double> head(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n));
    lx.push_back(std::log(static_cast<double>(n)));
    ly.push_back(std::log(batch_means_mcse(head).mcse));
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / 4, my = std::accumulate(ly.begin(), ly.end(), 0.0) / 4;
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  CHECK(sxy / sxx == doctest::Approx(-0.5).epsilon(0.1));
}

TEST_CASE("MCSE rejects short traces") {
  CHECK_THROWS_AS(batch_means_mcse(std::vector<double>(99, 0.0)), ValidationError);
  CHECK_NOTHROW(batch_means_mcse(std::vector<double>(100, 0.0)));
}

TEST_CASE("HPD of uniform draws has width close to the level") {
  Rng rng(6);
  std::vector<double> u(100000);
  for (double& v : u) v = rng.uniform();
  const Interval i = hpd_interval(u, 0.95);
  CHECK(i.width() == doctest::Approx(0.95).epsilon(0.005));
}

TEST_CASE("HPD of a symmetric unimodal sample is central") {
  const auto x = iid_normal(200000, 7);
  const Interval h = hpd_interval(x, 0.95);
  CHECK(h.lo == doctest::Approx(-1.96).epsilon(0.02));
  CHECK(h.hi == doctest::Approx(1.96).epsilon(0.02));
}

TEST_CASE("HPD of a point mass collapses") {
  const Interval h = hpd_interval(std::vector<double>(50, -2.0), 0.9);
  CHECK(h.lo == -2.0);
  CHECK(h.hi == -2.0);
}

TEST_CASE("HPD is never wider than the equal-tailed interval") {
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x(5000);
    for (double& v : x) v = std::exp(rng.normal());  // skewed
    CHECK(hpd_interval(x).width() <= equal_tailed_interval(x).width() + 1e-12);
  }
  CHECK_THROWS_AS(hpd_interval({}), ValidationError);
  CHECK_THROWS_AS(hpd_interval({1.0}, 1.0), ValidationError);
}

TEST_CASE("median") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
}

TEST_CASE("inclusion probabilities") {
  std::vector<double> ones(200, 1.0), alt(200);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = static_cast<double>(i % 2);
  const auto inc = inclusion_probabilities({ones, alt, std::vector<double>(10, 0.0)});
  CHECK(inc[0].probability == 1.0);
  CHECK(inc[0].mcse == 0.0);
  CHECK(inc[1].probability == 0.5);
  CHECK(inc[1].mcse < 0.01);
  CHECK(inc[2].probability == 0.0);
  CHECK(std::isnan(inc[2].mcse));
}

TEST_CASE("ZICOMP cdf pieces reduce to Poisson when pi = 1 and nu = 1") {
  for (double eta : {0.5, 3.0, 12.0}) {
    const boost::math::poisson_distribution<double> po(eta);
    for (std::int64_t y : {0, 1, 4, 15}) {
      const CellCdf c = zicomp_cdf_pmf(y, 1.0, eta, 1.0, 1e-15);
      const double below = y == 0 ? 0.0 : boost::math::cdf(po, static_cast<double>(y - 1));
      CHECK(c.cdf_below == doctest::Approx(below).epsilon(1e-10));
      CHECK(c.pmf == doctest::Approx(boost::math::pdf(po, static_cast<double>(y))).epsilon(1e-10));
    }
  }
}

TEST_CASE("zero-inflation moves mass to zero") {
  const double pi = 0.3, eta = 2.0;
  const boost::math::poisson_distribution<double> po(eta);
  const CellCdf z = zicomp_cdf_pmf(0, pi, eta, 1.0, 1e-15);
  CHECK(z.cdf_below == 0.0);
  CHECK(z.pmf == doctest::Approx(1 - pi + pi * boost::math::pdf(po, 0.0)).epsilon(1e-10));
  const CellCdf t = zicomp_cdf_pmf(3, pi, eta, 1.0, 1e-15);
  CHECK(t.cdf_below == doctest::Approx(1 - pi + pi * boost::math::cdf(po, 2.0)).epsilon(1e-10));
  CHECK(t.pmf == doctest::Approx(pi * boost::math::pdf(po, 3.0)).epsilon(1e-10));
}

TEST_CASE("rqr_value is the normal quantile of the randomized cdf") {
  const boost::math::normal_distribution<double> nd;
  const CellCdf c{0.25, 0.5};
  CHECK(rqr_value(c, 0.5) == doctest::Approx(boost::math::quantile(nd, 0.5)));
  CHECK(rqr_value(c, 0.0) == doctest::Approx(boost::math::quantile(nd, 0.25)));
  // y = 0 boundary: F(-1) = 0, U = 0 gives -inf.
  CHECK(rqr_value(CellCdf{0.0, 0.4}, 0.0) == -INFINITY);
  // Upper boundary reached by rounding.
  CHECK(rqr_value(CellCdf{0.9, 0.1}, 1.0) == INFINITY);
}

TEST_CASE("RQR residuals lie in their Poisson cdf brackets and look normal") {
  Lattice L(12, 4, 40.0, 9);
  const Predictors fit(L.truth, L.data, L.basis);
  const RqrSet r = rqr(L.data, fit, 77);
  const boost::math::normal_distribution<double> nd;
  std::vector<double> finite;
  for (std::size_t c = 0; c < L.data.cells(); ++c) {
    const double eta = fit.eta(c);
    const boost::math::poisson_distribution<double> po(eta);
    const auto y = static_cast<double>(L.data.y[c]);
    const double lo = y == 0 ? -INFINITY : boost::math::quantile(nd, boost::math::cdf(po, y - 1));
    const double hi = boost::math::quantile(nd, std::min(boost::math::cdf(po, y), 1.0 - 1e-16));
    CHECK(r.residual[c] >= lo - 1e-7);
    CHECK(r.residual[c] <= hi + 1e-7);
    finite.push_back(r.residual[c]);
  }
  CHECK(r.infinite == 0);
  CHECK(r.finite() == L.data.cells());
  CHECK(anderson_darling_pvalue(anderson_darling_normal(finite), finite.size()) > 0.01);

  const RqrSet again = rqr(L.data, fit, 77, kDefaultNormalizerTol, 3);
  CHECK(again.residual == r.residual);
  const RqrSet other = rqr(L.data, fit, 78);
  CHECK(other.residual != r.residual);
}

TEST_CASE("RQR skips missing cells") {
  Lattice L(4, 2, 1.0, 10);
  L.data.y[3] = kMissing;
  const RqrSet r = rqr(L.data, Predictors(L.truth, L.data, L.basis), 1);
  CHECK(std::isnan(r.residual[3]));
  CHECK(r.finite() == L.data.cells() - 1);
}

TEST_CASE("predictive mean: structural zeros and Poisson means") {
  Lattice L(4, 2, 1.0, 11);
  ModelState zero = L.truth;
  zero.beta1(0) = -1000.0;
  PredictiveMean pm = posterior_predictive_mean(fixed_chain(zero, 2, 2), L.data, L.basis, 50, 3);
  for (std::size_t c = 0; c < L.data.cells(); ++c) {
    CHECK(pm.mean[c] == 0.0);
    CHECK(pm.mc_error[c] == 0.0);
  }
  ModelState full = L.truth;
  full.beta1(0) = 40.0;
  pm = posterior_predictive_mean(fixed_chain(full, 2, 2), L.data, L.basis, 4000, 4);
  const Predictors fit(full, L.data, L.basis);
  for (std::size_t c = 0; c < L.data.cells(); ++c) {
    CHECK(std::abs(pm.mean[c] - fit.eta(c)) < 5.0 * std::sqrt(fit.eta(c) / 4000.0));
  }
  CHECK_THROWS_AS(posterior_predictive_mean(ChainOutput{}, L.data, L.basis, 5, 1), ValidationError);
}

TEST_CASE("Anderson-Darling p-values at the asymptotic critical points") {
  CHECK(anderson_darling_pvalue(1.933, 100000) == doctest::Approx(0.10).epsilon(0.02));
  CHECK(anderson_darling_pvalue(2.492, 100000) == doctest::Approx(0.05).epsilon(0.02));
  CHECK(anderson_darling_pvalue(3.857, 100000) == doctest::Approx(0.01).epsilon(0.02));
  CHECK(anderson_darling_pvalue(INFINITY, 10) == 0.0);
  CHECK(anderson_darling_normal({0.1, INFINITY}) == INFINITY);
}

TEST_CASE("Anderson-Darling test has its nominal size") {
  int reject = 0;
  for (std::uint64_t s = 0; s < 400; ++s) {
    const auto x = iid_normal(100, 1000 + s);
    reject += anderson_darling_pvalue(anderson_darling_normal(x), x.size()) < 0.05;
  }
  CHECK(reject >= 8);
  CHECK(reject <= 36);
  // A shifted sample is detected.
  auto x = iid_normal(200, 5);
  for (double& v : x) v += 0.5;
  CHECK(anderson_darling_pvalue(anderson_darling_normal(x), x.size()) < 0.01);
}

TEST_CASE("two-sample KS distance") {
  CHECK(ks_distance({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(ks_distance({1, 2}, {5, 6}) == 1.0);
  CHECK(ks_distance({1, 2, 3}, {2, 3, 4}) == doctest::Approx(1.0 / 3.0));
  CHECK(ks_distance(iid_normal(20000, 1), iid_normal(20000, 2)) < 0.02);
}

TEST_CASE("Pearson correlation") {
  CHECK(pearson_correlation({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
  CHECK(pearson_correlation({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
}

TEST_CASE("summaries and samples CSV round trip") {
  Lattice L(4, 2, 1.0, 12);
  ChainConfig cfg;
  cfg.n_iterations = 300;
  cfg.burn_in = 100;
  cfg.q = 2;
  cfg.progress_every = 0;
  const ChainOutput out = run_chain(L.data, L.basis, PriorConfig{}, cfg);
  const SummaryTable t = summarize(out);
  CHECK(t.size() == out.columns.size());
  for (const auto& row : t) {
    CHECK(row.hpd_lo <= row.median);
    CHECK(row.median <= row.hpd_hi);
  }
  std::stringstream ss;
  write_samples_csv(ss, out);
  const ChainOutput back = read_samples_csv(ss);
  CHECK(back.columns == out.columns);
  CHECK(back.draws == out.draws);
  const ModelState med = posterior_median_state(out);
  CHECK(med.beta1(0) == t[0].median);

  std::ostringstream s2;
  write_summary_csv(s2, t, 0.95);
  CHECK(s2.str().rfind("# format: zicomp.summary/1", 0) == 0);
  CHECK(output_schema().find("summary") != std::string::npos);
}
