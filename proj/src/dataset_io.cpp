#include "zicomp/dataset_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "zicomp/errors.hpp"

namespace zicomp {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

long long parse_int(const std::string& s, std::size_t line, const char* what) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(std::string("bad ") + what + " '" + s + "'", line);
  }
  return v;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("bad covariate value '" + s + "'", line);
  }
}

}  // namespace

Dataset read_dataset_csv(std::istream& in, const AdjacencyGraph& graph,
                         const CsvOptions& opts) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    header = split_csv(line);
    break;
  }
  if (header.size() < 3 || header[0] != "location_id" || header[1] != "period_id" ||
      header[2] != "y") {
    throw ParseError("expected header location_id,period_id,y[,x_1..x_p]", line_no);
  }
  const std::size_t p_cov = header.size() - 3;
  for (std::size_t k = 0; k < p_cov; ++k) {
    if (header[3 + k] != "x_" + std::to_string(k + 1)) {
      throw ParseError("covariate columns must be named x_1..x_p in order", line_no);
    }
  }

  struct Row {
    std::size_t s, t;
    std::int64_t y;
    std::vector<double> x;
  };
  std::vector<Row> rows;
  std::size_t T = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(f.size()),
                       line_no);
    }
    const long long s = parse_int(f[0], line_no, "location_id");
    const long long t = parse_int(f[1], line_no, "period_id");
    if (s < 0 || static_cast<std::size_t>(s) >= graph.size()) {
      throw ParseError("location_id outside graph", line_no);
    }
    if (t < 0) throw ParseError("negative period_id", line_no);
    std::int64_t y = kMissing;
    if (!f[2].empty() && f[2] != "NA") {
      y = parse_int(f[2], line_no, "count");
      if (y < 0) throw ParseError("negative count", line_no);
    }
    Row r{static_cast<std::size_t>(s), static_cast<std::size_t>(t), y, {}};
    for (std::size_t k = 0; k < p_cov; ++k) r.x.push_back(parse_double(f[3 + k], line_no));
    T = std::max(T, r.t + 1);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError("dataset has no rows", 0);

  Dataset d;
  d.n = graph.size();
  d.T = T;
  d.graph = graph;
  d.y.assign(d.cells(), kMissing);
  d.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d.cells()),
                              static_cast<Eigen::Index>(p_cov + 1));
  d.X.col(0).setOnes();
  std::vector<std::uint8_t> seen(d.cells(), 0);
  for (const auto& r : rows) {
    const std::size_t c = d.cell(r.s, r.t);
    if (seen[c]) {
      throw ParseError("duplicate row for location " + std::to_string(r.s) + ", period " +
                           std::to_string(r.t),
                       0);
    }
    seen[c] = 1;
    d.y[c] = r.y;
    for (std::size_t k = 0; k < p_cov; ++k) {
      d.X(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k + 1)) = r.x[k];
    }
  }
  d.M = month_dummies(T, opts.reference_month, opts.first_month);
  if (opts.standardize) standardize_covariates(d);
  d.validate();
  return d;
}

Dataset read_dataset_csv(const std::filesystem::path& path, const AdjacencyGraph& graph,
                         const CsvOptions& opts) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset " + path.string(), 0);
  return read_dataset_csv(in, graph, opts);
}

void write_dataset_csv(std::ostream& out, const Dataset& d) {
  out << "# format: zicomp.dataset/1\n";
  out << "location_id,period_id,y";
  for (std::size_t k = 1; k < d.p(); ++k) out << ",x_" << k;
  out << "\n" << std::setprecision(17);
  for (std::size_t s = 0; s < d.n; ++s) {
    for (std::size_t t = 0; t < d.T; ++t) {
      const std::size_t c = d.cell(s, t);
      out << s << "," << t << ",";
      if (d.missing(c)) {
        out << "NA";
      } else {
        out << d.y[c];
      }
      for (std::size_t k = 1; k < d.p(); ++k) {
        out << "," << d.X(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k));
      }
      out << "\n";
    }
  }
}

void standardize_covariates(Dataset& d) {
  for (Eigen::Index k = 1; k < d.X.cols(); ++k) {
    double sum = 0.0, sum2 = 0.0, cnt = 0.0;
    for (std::size_t c = 0; c < d.cells(); ++c) {
      if (d.missing(c)) continue;
      const double v = d.X(static_cast<Eigen::Index>(c), k);
      sum += v;
      sum2 += v * v;
      cnt += 1.0;
    }
    if (cnt < 2.0) continue;
    const double mean = sum / cnt;
    const double sd = std::sqrt(std::max(0.0, (sum2 - cnt * mean * mean) / (cnt - 1.0)));
    if (!(sd > 0.0)) throw ValidationError("cannot standardize a constant covariate");
    d.X.col(k) = ((d.X.col(k).array() - mean) / sd).matrix();
  }
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json state_to_json(const ModelState& s) {
  nlohmann::json j;
  j["format"] = "zicomp.state/1";
  j["w"] = s.w;
  j["beta1"] = vector_to_json(s.beta1);
  j["beta2"] = vector_to_json(s.beta2);
  j["zeta"] = vector_to_json(s.zeta);
  j["alpha"] = s.alpha;
  j["gamma"] = vector_to_json(s.gamma);
  j["delta"] = vector_to_json(s.delta);
  j["I_gamma"] = s.I_gamma;
  j["I_delta"] = s.I_delta;
  j["kappa"] = s.kappa;
  j["tau"] = s.tau;
  return j;
}

ModelState state_from_json(const nlohmann::json& j) {
  ModelState s;
  s.w = j.at("w").get<std::vector<std::uint8_t>>();
  s.beta1 = vector_from_json(j.at("beta1"));
  s.beta2 = vector_from_json(j.at("beta2"));
  s.zeta = vector_from_json(j.at("zeta"));
  s.alpha = j.at("alpha").get<double>();
  s.gamma = vector_from_json(j.at("gamma"));
  s.delta = vector_from_json(j.at("delta"));
  s.I_gamma = j.at("I_gamma").get<std::vector<std::uint8_t>>();
  s.I_delta = j.at("I_delta").get<std::vector<std::uint8_t>>();
  s.kappa = j.at("kappa").get<double>();
  s.tau = j.at("tau").get<double>();
  if (!(s.kappa > 0) || !(s.tau > 0)) throw ValidationError("state: kappa and tau must be positive");
  if (s.gamma.size() != s.delta.size() ||
      s.I_gamma.size() != static_cast<std::size_t>(s.gamma.size()) ||
      s.I_delta.size() != static_cast<std::size_t>(s.delta.size())) {
    throw ValidationError("state: basis block lengths disagree");
  }
  return s;
}

nlohmann::json prior_to_json(const PriorConfig& p) {
  return {{"fixed_effect_variance", p.fixed_effect_variance},
          {"smoothing_shape", p.smoothing_shape},
          {"smoothing_rate", p.smoothing_rate},
          {"indicator_inclusion", p.indicator_inclusion},
          {"w_prior", p.w_prior}};
}

PriorConfig prior_from_json(const nlohmann::json& j) {
  PriorConfig p;
  p.fixed_effect_variance = j.value("fixed_effect_variance", p.fixed_effect_variance);
  p.smoothing_shape = j.value("smoothing_shape", p.smoothing_shape);
  p.smoothing_rate = j.value("smoothing_rate", p.smoothing_rate);
  p.indicator_inclusion = j.value("indicator_inclusion", p.indicator_inclusion);
  p.w_prior = j.value("w_prior", p.w_prior);
  p.validate();
  return p;
}

}  // namespace zicomp
