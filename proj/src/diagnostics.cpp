#include "zicomp/diagnostics.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "zicomp/comp_dist.hpp"
#include "zicomp/errors.hpp"

namespace zicomp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_field(const std::string& s) {
  if (s == "NA") return kNaN;
  if (s == "Inf") return kInf;
  if (s == "-Inf") return -kInf;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("bad numeric field '" + s + "'", 0);
  }
  return v;
}

// Marsaglia & Marsaglia (2004), "Evaluating the Anderson-Darling distribution".
double adinf(double z) {
  if (z < 2.0) {
    return std::exp(-1.2337141 / z) / std::sqrt(z) *
           (2.00012 + (.247105 - (.0649821 - (.0347962 - (.011672 - .00168691 * z) * z) * z) * z) * z);
  }
  return std::exp(
      -std::exp(1.0776 - (2.30695 - (.43424 - (.082433 - (.008056 - .0003146 * z) * z) * z) * z) * z));
}

double errfix(double n, double x) {
  if (x > .8) {
    return (-130.2137 + (745.2337 - (1705.091 - (1950.646 - (1116.360 - 255.7844 * x) * x) * x) * x) * x) / n;
  }
  const double c = .01265 + .1757 / n;
  if (x < c) {
    double t = x / c;
    t = std::sqrt(t) * (1. - t) * (49 * t - 102);
    return t * (.0037 / (n * n) + .00078 / n + .00006) / n;
  }
  double t = (x - c) / (.8 - c);
  t = -.00022633 + (6.54034 - (14.6538 - (14.458 - (8.259 - 1.91864 * t) * t) * t) * t) * t;
  return t * (.04213 / n + .01365 / (n * n));
}

}  // namespace

Mcse batch_means_mcse(const std::vector<double>& trace) {
  if (trace.size() < kMinMcseLength) {
    throw ValidationError("batch means needs at least " + std::to_string(kMinMcseLength) +
                          " draws, got " + std::to_string(trace.size()));
  }
  const auto b = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(trace.size()))));
  const std::size_t a = trace.size() / b;
  std::vector<double> means(a);
  for (std::size_t k = 0; k < a; ++k) {
    double s = 0.0;
    for (std::size_t i = k * b; i < (k + 1) * b; ++i) s += trace[i];
    means[k] = s / static_cast<double>(b);
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(a);
  double ss = 0.0;
  for (double m : means) ss += (m - grand) * (m - grand);
  const double sd = std::sqrt(ss / static_cast<double>(a - 1));
  return {sd / std::sqrt(static_cast<double>(a)), a};
}

Interval hpd_interval(std::vector<double> samples, double level) {
  if (samples.empty()) throw ValidationError("HPD interval of an empty sample");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("HPD level must lie in (0, 1)");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  const auto m = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(level * static_cast<double>(n))));
  std::size_t best = 0;
  double width = kInf;
  for (std::size_t i = 0; i + m <= n; ++i) {
    const double w = samples[i + m - 1] - samples[i];
    if (w < width) {
      width = w;
      best = i;
    }
  }
  return {samples[best], samples[best + m - 1]};
}

Interval equal_tailed_interval(std::vector<double> samples, double level) {
  if (samples.empty()) throw ValidationError("interval of an empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  const double tail = (1.0 - level) / 2.0;
  auto at = [&](double prob) {
    const auto k = static_cast<std::size_t>(std::clamp(std::floor(prob * n), 0.0, n - 1));
    return samples[k];
  };
  return {at(tail), at(1.0 - tail)};
}

double median(std::vector<double> samples) {
  if (samples.empty()) throw ValidationError("median of an empty sample");
  const std::size_t n = samples.size();
  std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n / 2), samples.end());
  const double hi = samples[n / 2];
  if (n % 2) return hi;
  const double lo = *std::max_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n / 2));
  return 0.5 * (lo + hi);
}

std::vector<Inclusion> inclusion_probabilities(const std::vector<std::vector<double>>& traces) {
  std::vector<Inclusion> out;
  for (const auto& t : traces) {
    Inclusion inc;
    inc.probability = t.empty() ? kNaN : std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
    inc.mcse = t.size() >= kMinMcseLength ? batch_means_mcse(t).mcse : kNaN;
    out.push_back(inc);
  }
  return out;
}

SummaryTable summarize(const ChainOutput& chain, double level) {
  SummaryTable table;
  if (chain.draws.empty()) return table;
  for (std::size_t k = 0; k < chain.columns.size(); ++k) {
    std::vector<double> trace;
    trace.reserve(chain.draws.size());
    for (const auto& row : chain.draws) trace.push_back(row[k]);
    SummaryRow r;
    r.name = chain.columns[k];
    r.median = median(trace);
    const Interval hpd = hpd_interval(trace, level);
    r.hpd_lo = std::min(hpd.lo, r.median);
    r.hpd_hi = std::max(hpd.hi, r.median);
    if (trace.size() >= kMinMcseLength) {
      const Mcse m = batch_means_mcse(trace);
      r.mcse = m.mcse;
      r.batches = m.batches;
    } else {
      r.mcse = kNaN;
    }
    table.push_back(r);
  }
  return table;
}

ModelState posterior_median_state(const ChainOutput& chain) {
  if (chain.draws.empty()) return chain.final_state;
  std::vector<double> row(chain.columns.size());
  for (std::size_t k = 0; k < chain.columns.size(); ++k) {
    std::vector<double> trace;
    trace.reserve(chain.draws.size());
    for (const auto& r : chain.draws) trace.push_back(r[k]);
    row[k] = median(std::move(trace));
  }
  ChainOutput tmp;
  tmp.final_state = chain.final_state;
  tmp.draws = {row};
  ModelState s = tmp.state_at(0);
  // Indicators at the median are the majority vote; a tie counts as included.
  for (auto* ind : {&s.I_gamma, &s.I_delta}) {
    for (auto& v : *ind) v = v ? 1 : 0;
  }
  return s;
}

CellCdf zicomp_cdf_pmf(std::int64_t y, double pi, double eta, double nu, double tol) {
  const CompParams p(eta, nu);
  const double log_c = comp_log_normalizer(p, tol).log_c;
  double below = 0.0;
  if (y >= 1) {
    double partial = 0.0;
    for (std::int64_t k = 0; k < y; ++k) partial += std::exp(comp_log_kernel(k, p) - log_c);
    below = (1.0 - pi) + pi * std::min(partial, 1.0);
  }
  double f = pi * std::exp(comp_log_kernel(y, p) - log_c);
  if (y == 0) f += 1.0 - pi;
  return {below, f};
}

std::size_t RqrSet::finite() const {
  return static_cast<std::size_t>(
      std::count_if(residual.begin(), residual.end(), [](double r) { return std::isfinite(r); }));
}

double rqr_value(const CellCdf& cell, double u) {
  const double v = cell.cdf_below + u * cell.pmf;
  if (v >= 1.0) return kInf;
  if (v <= 0.0) return -kInf;
  static const boost::math::normal_distribution<double> std_normal;
  return boost::math::quantile(std_normal, v);
}

RqrSet rqr(const Dataset& data, const Predictors& fit, std::uint64_t seed, double tol,
           int threads) {
  RqrSet out;
  out.seed = seed;
  out.residual.assign(data.cells(), kNaN);
  std::vector<std::uint8_t> failed(data.cells(), 0);
  auto body = [&](std::size_t c) {
    if (data.missing(c)) return;
    Rng rng = Rng::stream(seed, c);
    const double u = rng.uniform();
    try {
      out.residual[c] = rqr_value(zicomp_cdf_pmf(data.y[c], fit.pi(c), fit.eta(c), fit.nu(c), tol), u);
    } catch (const std::exception&) {
      failed[c] = 1;
    }
  };
#if defined(_OPENMP)
  if (threads > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(data.cells()); ++c) {
      body(static_cast<std::size_t>(c));
    }
  } else
#endif
  {
    (void)threads;
    for (std::size_t c = 0; c < data.cells(); ++c) body(c);
  }
  for (std::size_t c = 0; c < data.cells(); ++c) {
    if (failed[c]) {
      throw NumericError("cdf evaluation failed at location " + std::to_string(data.location(c)) +
                         ", period " + std::to_string(data.period(c)));
    }
    if (std::isinf(out.residual[c])) ++out.infinite;
  }
  return out;
}

PredictiveMean posterior_predictive_mean(const ChainOutput& chain, const Dataset& data,
                                         const BasisSet& basis, std::size_t draws,
                                         std::uint64_t seed, int threads) {
  if (draws < 1) throw ValidationError("predictive draws must be >= 1");
  if (chain.draws.empty()) throw ValidationError("chain has no recorded draws");
  // Predict every cell, including missing ones.
  Dataset tmpl = data;
  std::fill(tmpl.y.begin(), tmpl.y.end(), 0);
  const std::size_t cells = data.cells();
  std::vector<double> sum(cells, 0.0), sum2(cells, 0.0);
  for (std::size_t d = 0; d < draws; ++d) {
    ModelState s = chain.state_at(d % chain.draws.size());
    s.w.assign(cells, 1);
    const SimulatedCounts sim = simulate_dataset(s, tmpl, basis, derive_seed(seed, d), threads);
    for (std::size_t c = 0; c < cells; ++c) {
      const double v = static_cast<double>(sim.y[c]);
      sum[c] += v;
      sum2[c] += v * v;
    }
  }
  PredictiveMean pm;
  pm.mean.resize(cells);
  pm.mc_error.resize(cells);
  const double n = static_cast<double>(draws);
  for (std::size_t c = 0; c < cells; ++c) {
    pm.mean[c] = sum[c] / n;
    const double var = n > 1 ? std::max(0.0, (sum2[c] - n * pm.mean[c] * pm.mean[c]) / (n - 1)) : 0.0;
    pm.mc_error[c] = std::sqrt(var / n);
  }
  return pm;
}

double anderson_darling_normal(std::vector<double> x) {
  if (x.empty()) throw ValidationError("Anderson-Darling needs a nonempty sample");
  for (double v : x) {
    if (!std::isfinite(v)) return kInf;
  }
  std::sort(x.begin(), x.end());
  const boost::math::normal_distribution<double> nd;
  const std::size_t n = x.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = std::log(boost::math::cdf(nd, x[i]));
    const double hi = std::log(boost::math::cdf(boost::math::complement(nd, x[n - 1 - i])));
    s += (2.0 * static_cast<double>(i) + 1.0) * (lo + hi);
  }
  return -static_cast<double>(n) - s / static_cast<double>(n);
}

double anderson_darling_pvalue(double a2, std::size_t n) {
  if (!std::isfinite(a2)) return 0.0;
  if (a2 <= 0.0) return 1.0;
  const double x = adinf(a2);
  const double cdf = std::clamp(x + errfix(static_cast<double>(n), x), 0.0, 1.0);
  return 1.0 - cdf;
}

double ks_distance(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ValidationError("KS distance needs nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ValidationError("correlation needs equal sizes >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

void write_summary_csv(std::ostream& out, const SummaryTable& table, double level) {
  out << "# format: zicomp.summary/1 level=" << fmt(level) << "\n";
  out << "parameter,median,hpd_lo,hpd_hi,mcse,batches\n";
  for (const auto& r : table) {
    out << r.name << "," << fmt(r.median) << "," << fmt(r.hpd_lo) << "," << fmt(r.hpd_hi) << ","
        << fmt(r.mcse) << "," << r.batches << "\n";
  }
}

void write_inclusion_csv(std::ostream& out, const ChainOutput& chain) {
  out << "# format: zicomp.inclusion/1\n";
  out << "block,index,probability,mcse\n";
  if (chain.draws.empty()) return;
  for (const char* block : {"gamma", "delta"}) {
    const auto inc = inclusion_probabilities(chain.inclusion_traces(block));
    for (std::size_t j = 0; j < inc.size(); ++j) {
      out << block << "," << j << "," << fmt(inc[j].probability) << "," << fmt(inc[j].mcse) << "\n";
    }
  }
}

void write_rqr_csv(std::ostream& out, const Dataset& data, const RqrSet& r) {
  out << "# format: zicomp.rqr/1 seed=" << r.seed << " infinite=" << r.infinite << "\n";
  out << "cell,location_id,period_id,residual\n";
  for (std::size_t c = 0; c < data.cells(); ++c) {
    if (data.missing(c)) continue;
    out << c << "," << data.location(c) << "," << data.period(c) << "," << fmt(r.residual[c]) << "\n";
  }
}

void write_predictive_csv(std::ostream& out, const Dataset& data, const PredictiveMean& pm) {
  out << "# format: zicomp.predictive/1\n";
  out << "location_id,period_id,mean,mc_error\n";
  for (std::size_t c = 0; c < data.cells(); ++c) {
    out << data.location(c) << "," << data.period(c) << "," << fmt(pm.mean[c]) << ","
        << fmt(pm.mc_error[c]) << "\n";
  }
}

void write_samples_csv(std::ostream& out, const ChainOutput& chain) {
  out << "# format: zicomp.samples/1\n";
  for (std::size_t k = 0; k < chain.columns.size(); ++k) out << (k ? "," : "") << chain.columns[k];
  out << "\n";
  for (const auto& row : chain.draws) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << fmt(row[k]);
    out << "\n";
  }
}

ChainOutput read_samples_csv(std::istream& in) {
  ChainOutput out;
  std::string line;
  bool header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!header) {
      out.columns = fields;
      header = true;
      continue;
    }
    if (fields.size() != out.columns.size()) throw ParseError("wrong field count in samples", line_no);
    std::vector<double> row;
    row.reserve(fields.size());
    try {
      for (const auto& x : fields) row.push_back(parse_field(x));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
    out.draws.push_back(std::move(row));
  }
  if (!header) throw ParseError("samples file has no header", line_no);
  std::size_t p = 0, q = 0;
  for (const auto& c : out.columns) {
    if (c.rfind("beta1_", 0) == 0) ++p;
    if (c.rfind("gamma_", 0) == 0) ++q;
  }
  if (out.columns != sample_columns(p, q)) throw ParseError("unexpected sample columns", 1);
  out.final_state = ModelState::zeros(0, p, q);
  if (!out.draws.empty()) out.final_state = out.state_at(out.draws.size() - 1);
  return out;
}

std::string output_schema() {
  return R"(zicomp output tables (CSV, first line '# format: <name>/<version>')

zicomp.samples/1 (samples.csv): one row per recorded draw.
  beta1_k, beta2_k   regression coefficients, k = 0 is the intercept
  zeta_k             month effects, k = 0..10 in calendar order skipping the reference month
  alpha              dispersion intercept
  gamma_k, delta_k   basis coefficients (full vectors, before masking)
  I_gamma_k, I_delta_k  inclusion indicators (0/1)
  kappa, tau         smoothing precisions

zicomp.summary/1 (summary.csv): one row per sample column.
  parameter, median, hpd_lo, hpd_hi (HPD at the level in the header),
  mcse (batch means, NA below 100 draws), batches (batch count)

zicomp.inclusion/1 (inclusion.csv):
  block (gamma|delta), index, probability (mean indicator), mcse

zicomp.rqr/1 (rqr.csv): observed cells only.
  cell (location * T + period), location_id, period_id,
  residual (normal scale; Inf/-Inf when the uniform rounds to 1/0)

zicomp.predictive/1 (predictive.csv): every cell.
  location_id, period_id, mean (posterior predictive mean), mc_error (sd / sqrt(draws))

Numbers are written in shortest round-trip form; NA marks an undefined value.
)";
}

}  // namespace zicomp
