#include <doctest.h>

#include <sstream>

#include "zicomp/dataset_io.hpp"
#include "zicomp/errors.hpp"

using namespace zicomp;

TEST_CASE("long-format CSV ingestion") {
  const auto g = build_lattice(1, 3);
  std::istringstream in(
      "# comment\n"
      "location_id,period_id,y,x_1\n"
      "0,0,3,0.5\n"
      "0,1,NA,0.25\n"
      "1,0,0,1.5\n"
      "1,1,,2\n"
      "2,1,7,-1\n");
  const Dataset d = read_dataset_csv(in, g);
  CHECK(d.n == 3);
  CHECK(d.T == 2);
  CHECK(d.p() == 2);
  CHECK(d.y[d.cell(0, 0)] == 3);
  CHECK(d.missing(d.cell(0, 1)));
  CHECK(d.missing(d.cell(1, 1)));
  CHECK(d.missing(d.cell(2, 0)));  // absent row
  CHECK(d.y[d.cell(2, 1)] == 7);
  CHECK(d.X(static_cast<Eigen::Index>(d.cell(2, 1)), 1) == -1.0);
  CHECK(d.X.col(0).isOnes());
  CHECK(d.M.rows() == 2);
}

TEST_CASE("CSV errors carry line numbers") {
  const auto g = build_lattice(1, 3);
  auto line_of = [&](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      read_dataset_csv(in, g);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("location_id,period_id,y\n0,0,1\n0,1,-2\n") == 3);
  CHECK(line_of("location_id,period_id,y\n0,0,1\n5,1,2\n") == 3);
  CHECK(line_of("location_id,period_id,y,x_1\n0,0,1,abc\n") == 2);
  CHECK(line_of("location_id,period_id,y\n0,0\n") == 2);
  CHECK(line_of("loc,period_id,y\n") == 1);
  CHECK(line_of("location_id,period_id,y,x_2\n") == 1);
  std::istringstream dup("location_id,period_id,y\n0,0,1\n0,0,2\n");
  CHECK_THROWS_AS(read_dataset_csv(dup, g), ParseError);
}

TEST_CASE("standardization") {
  const auto g = build_lattice(1, 2);
  std::istringstream in("location_id,period_id,y,x_1\n0,0,1,1\n1,0,2,3\n0,1,2,5\n1,1,NA,100\n");
  CsvOptions opts;
  opts.standardize = true;
  const Dataset d = read_dataset_csv(in, g, opts);
  // mean 3, sd 2 over observed cells
  CHECK(d.X(static_cast<Eigen::Index>(d.cell(0, 0)), 1) == doctest::Approx(-1.0));
  CHECK(d.X(static_cast<Eigen::Index>(d.cell(0, 1)), 1) == doctest::Approx(1.0));
  std::istringstream flat("location_id,period_id,y,x_1\n0,0,1,1\n1,0,2,1\n");
  CHECK_THROWS_AS(read_dataset_csv(flat, g, opts), ValidationError);
}

TEST_CASE("dataset write/read round trip") {
  const auto g = build_lattice(2, 2);
  std::istringstream in("location_id,period_id,y,x_1,x_2\n0,0,1,0.1,0.2\n1,0,NA,0.3,0.4\n2,0,0,1e-3,3\n3,0,9,0.7,-0.125\n");
  const Dataset d = read_dataset_csv(in, g);
  std::stringstream ss;
  write_dataset_csv(ss, d);
  const Dataset back = read_dataset_csv(ss, g);
  CHECK(back.y == d.y);
  CHECK(back.X == d.X);
  CHECK(back.M == d.M);
}

TEST_CASE("state and prior JSON round trip") {
  ModelState s = ModelState::zeros(4, 2, 3);
  s.beta1 << 0.1, -1.0 / 3.0;
  s.gamma << 1e-300, 2.5, -7.0;
  s.I_delta = {0, 1, 0};
  s.w = {1, 0, 1, 1};
  s.kappa = 0.123456789012345678;
  const ModelState back = state_from_json(nlohmann::json::parse(state_to_json(s).dump()));
  CHECK(back == s);
  nlohmann::json bad = state_to_json(s);
  bad["kappa"] = -1.0;
  CHECK_THROWS_AS(state_from_json(bad), ValidationError);

  PriorConfig p;
  p.indicator_inclusion = 0.2;
  const PriorConfig pb = prior_from_json(prior_to_json(p));
  CHECK(pb.indicator_inclusion == 0.2);
  CHECK(pb.smoothing_rate == 1000.0);
}
