#include "zicomp/comp_dist.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "zicomp/errors.hpp"

namespace zicomp {

namespace {

std::string describe(const CompParams& p) {
  std::ostringstream os;
  os.precision(17);
  os << "(eta = " << p.eta << ", nu = " << p.nu << ")";
  return os.str();
}

inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

constexpr std::int64_t kMaxCount = std::int64_t{1} << 62;

}  // namespace

CompParams::CompParams(double eta_, double nu_) : eta(eta_), nu(nu_) {
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw ValidationError("COMP eta must be positive and finite");
  }
  if (!(nu > 0.0) || !std::isfinite(nu)) {
    throw ValidationError("COMP nu must be positive and finite");
  }
}

double CompParams::lambda() const { return std::pow(eta, nu); }

double comp_log_kernel(std::int64_t y, const CompParams& p) {
  if (y < 0) throw ValidationError("COMP support is the nonnegative integers");
  if (y == 0) return 0.0;
  const double yd = static_cast<double>(y);
  return p.nu * (yd * std::log(p.eta) - std::lgamma(yd + 1.0));
}

NormalizerResult comp_log_normalizer(const CompParams& p, double tol,
                                     std::size_t max_terms) {
  if (!(tol > 0.0)) throw ValidationError("normalizer tolerance must be positive");
  const double log_eta = std::log(p.eta);
  double log_sum = 0.0;  // t_0 = 1
  double log_term = 0.0;
  for (std::size_t z = 0; z + 1 < max_terms; ++z) {
    // t_{z+1} / t_z = (eta / (z + 1))^nu
    const double log_ratio = p.nu * (log_eta - std::log(static_cast<double>(z + 1)));
    const double log_next = log_term + log_ratio;
    if (log_ratio < 0.0) {
      // Ratios decrease monotonically past the mode, so the tail from z+1 on
      // is bounded by a geometric series with ratio t_{z+2}/t_{z+1}.
      const double log_ratio_next =
          p.nu * (log_eta - std::log(static_cast<double>(z + 2)));
      const double log_tail = log_next - std::log(-std::expm1(log_ratio_next));
      if (log_tail - log_sum < std::log(tol)) {
        NormalizerResult r;
        r.log_c = log_sum;
        r.terms_used = z + 1;
        r.tail_bound = std::exp(log_tail - log_sum);
        return r;
      }
    }
    log_term = log_next;
    log_sum = log_add(log_sum, log_term);
  }
  throw NumericError("COMP normalizer did not converge within " +
                     std::to_string(max_terms) + " terms at " + describe(p));
}

double comp_log_pmf(std::int64_t y, const CompParams& p, double tol) {
  return comp_log_kernel(y, p) - comp_log_normalizer(p, tol).log_c;
}

double comp_pmf(std::int64_t y, const CompParams& p, double tol) {
  return std::exp(comp_log_pmf(y, p, tol));
}

Moments comp_mean_var_approx(const CompParams& p) {
  return {p.eta + 1.0 / (2.0 * p.nu) - 0.5, p.eta / p.nu};
}

Moments comp_exact_moments(const CompParams& p, double tol) {
  const NormalizerResult norm = comp_log_normalizer(p, tol);
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t z = 0; z < norm.terms_used; ++z) {
    const auto zi = static_cast<std::int64_t>(z);
    const double pz = std::exp(comp_log_kernel(zi, p) - norm.log_c);
    const double zd = static_cast<double>(z);
    m1 += zd * pz;
    m2 += zd * zd * pz;
  }
  return {m1, m2 - m1 * m1};
}

std::int64_t poisson_sample(double mean, Rng& rng) {
  if (!(mean > 0.0)) return 0;
  std::poisson_distribution<std::int64_t> d(mean);
  return d(rng);
}

std::int64_t comp_sample(const CompParams& p, Rng& rng) {
  const double log_eta = std::log(p.eta);
  auto log_kernel = [&](double y) { return p.nu * (y * log_eta - std::lgamma(y + 1.0)); };

  if (p.nu >= 1.0) {
    // Kernel / Poisson kernel = (eta^y / y!)^(nu - 1), maximized at floor(eta).
    const double mode = std::floor(p.eta);
    const double log_bound = (p.nu - 1.0) * (mode * log_eta - std::lgamma(mode + 1.0));
    std::poisson_distribution<std::int64_t> envelope(p.eta);
    for (std::uint64_t attempt = 0; attempt < kCompMaxAttempts; ++attempt) {
      const std::int64_t y = envelope(rng);
      const double yd = static_cast<double>(y);
      const double log_accept =
          (p.nu - 1.0) * (yd * log_eta - std::lgamma(yd + 1.0)) - log_bound;
      if (std::log(rng.uniform()) <= log_accept) return y;
    }
  } else {
    // Geometric envelope (1-prob)^y with the success probability suggested
    // for over-dispersed COMP; any prob in (0,1) gives an exact sampler.
    const double prob = 2.0 * p.nu / (2.0 * p.eta * p.nu + 1.0 + p.nu);
    const double log_fail = std::log1p(-prob);
    auto log_ratio = [&](double y) { return log_kernel(y) - y * log_fail; };
    // Ratio increments (eta/(y+1))^nu / (1-prob) >= 1 up to this point.
    const double peak = std::exp(log_eta - log_fail / p.nu);
    double y_star = std::floor(std::min(peak, static_cast<double>(kMaxCount)));
    double log_bound = log_ratio(y_star);
    for (double cand : {y_star - 1.0, y_star + 1.0}) {
      if (cand >= 0.0) log_bound = std::max(log_bound, log_ratio(cand));
    }
    for (std::uint64_t attempt = 0; attempt < kCompMaxAttempts; ++attempt) {
      const double g = std::floor(std::log(rng.uniform()) / log_fail);
      const double y = std::min(g, static_cast<double>(kMaxCount));
      if (std::log(rng.uniform()) <= log_ratio(y) - log_bound) {
        return static_cast<std::int64_t>(y);
      }
    }
  }
  throw NumericError("COMP rejection sampler acceptance rate below 1e-6 at " +
                     describe(p));
}

double nb_log_pmf(std::int64_t z, double a, double b) {
  if (z < 0) return -std::numeric_limits<double>::infinity();
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("NB mean and dispersion must be positive");
  const double zd = static_cast<double>(z);
  // log(b/(a+b)) = -log1p(a/b), log(a/(a+b)) = -log1p(b/a)
  double out = -b * std::log1p(a / b);
  if (z > 0) {
    out += std::lgamma(zd + b) - std::lgamma(zd + 1.0) - std::lgamma(b) -
           zd * std::log1p(b / a);
  }
  return out;
}

double nb_pmf(std::int64_t z, double a, double b) { return std::exp(nb_log_pmf(z, a, b)); }

std::int64_t nb_sample(double a, double b, Rng& rng) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("NB mean and dispersion must be positive");
  std::gamma_distribution<double> mix(b, a / b);
  return poisson_sample(mix(rng), rng);
}

}  // namespace zicomp
