#pragma once

#include <cstddef>
#include <cstdint>

#include "zicomp/rng.hpp"

namespace zicomp {

// COMP in the approximate-mode parameterization: P(y) ∝ (eta^y / y!)^nu.
// The classic rate is lambda = eta^nu. nu = 0 (the geometric limit) is not a
// valid runtime value: the log link never produces it.
struct CompParams {
  double eta;
  double nu;

  CompParams(double eta, double nu);
  double lambda() const;
};

struct NormalizerResult {
  double log_c = 0.0;
  std::size_t terms_used = 0;
  // Upper bound on the omitted tail divided by c.
  double tail_bound = 0.0;
};

inline constexpr double kDefaultNormalizerTol = 1e-10;
inline constexpr std::size_t kDefaultNormalizerCap = 1'000'000;

// nu * (y log eta - log y!)
double comp_log_kernel(std::int64_t y, const CompParams& p);

// Truncated log-sum-exp of the kernel. Stops once the term ratio has fallen
// below one and the geometric tail bound is below tol times the partial sum.
NormalizerResult comp_log_normalizer(const CompParams& p, double tol = kDefaultNormalizerTol,
                                     std::size_t max_terms = kDefaultNormalizerCap);

double comp_log_pmf(std::int64_t y, const CompParams& p, double tol = kDefaultNormalizerTol);
double comp_pmf(std::int64_t y, const CompParams& p, double tol = kDefaultNormalizerTol);

struct Moments {
  double mean;
  double var;
};

// E(Y) ≈ eta + 1/(2 nu) - 1/2, V(Y) ≈ eta / nu.
Moments comp_mean_var_approx(const CompParams& p);

// Moments by summation over the normalizer's truncation range.
Moments comp_exact_moments(const CompParams& p, double tol = kDefaultNormalizerTol);

// Exact rejection sampler. Poisson(eta) envelope for nu >= 1, geometric
// envelope for nu < 1. Throws NumericError when no draw is accepted within
// kCompMaxAttempts proposals (acceptance rate well below 1e-6).
inline constexpr std::uint64_t kCompMaxAttempts = 20'000'000;
std::int64_t comp_sample(const CompParams& p, Rng& rng);

// Negative binomial with mean a and dispersion b:
// Γ(z+b)/(Γ(z+1)Γ(b)) (b/(a+b))^b (a/(a+b))^z.
double nb_log_pmf(std::int64_t z, double mean, double disp);
double nb_pmf(std::int64_t z, double mean, double disp);

// Gamma-Poisson mixture draw.
std::int64_t nb_sample(double mean, double disp, Rng& rng);

std::int64_t poisson_sample(double mean, Rng& rng);

}  // namespace zicomp
