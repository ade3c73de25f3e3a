#pragma once

#include <filesystem>
#include <iosfwd>
#include <json.hpp>

#include "zicomp/model.hpp"

namespace zicomp {

struct CsvOptions {
  int reference_month = 0;  // January
  int first_month = 0;      // calendar month of period 0
  bool standardize = false;
};

// Long format: location_id,period_id,y,x_1..x_p with zero-based ids. The
// intercept is added as the first column of X. y may be NA or empty for a
// missing cell; absent (location, period) pairs are missing as well. Lines
// starting with '#' are skipped.
Dataset read_dataset_csv(std::istream& in, const AdjacencyGraph& graph,
                         const CsvOptions& opts = {});
Dataset read_dataset_csv(const std::filesystem::path& path, const AdjacencyGraph& graph,
                         const CsvOptions& opts = {});
void write_dataset_csv(std::ostream& out, const Dataset& data);

// Centers and scales every non-intercept covariate over observed cells.
void standardize_covariates(Dataset& data);

nlohmann::json state_to_json(const ModelState& s);
ModelState state_from_json(const nlohmann::json& j);

nlohmann::json prior_to_json(const PriorConfig& p);
PriorConfig prior_from_json(const nlohmann::json& j);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);

}  // namespace zicomp
