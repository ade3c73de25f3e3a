#pragma once

#include <filesystem>
#include <json.hpp>

#include "zicomp/mcmc.hpp"

namespace zicomp {

// Everything needed to continue a chain bit-for-bit: model state, master RNG,
// adaptation state, counters and the draws recorded so far.
struct Checkpoint {
  static constexpr int kVersion = 1;
  ModelState state;
  Rng::State rng{};
  std::size_t iteration = 0;
  std::array<LapState, kBlockCount> lap;
  std::map<std::string, AcceptStats> acceptance;
  std::vector<std::vector<double>> draws;
  std::vector<double> w_sum;
  std::uint64_t aux_failures = 0;
  std::uint64_t guard_rejections = 0;
  std::uint64_t seed = 0;
};

nlohmann::json checkpoint_to_json(const Checkpoint& cp);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json chain_config_to_json(const ChainConfig& c);
ChainConfig chain_config_from_json(const nlohmann::json& j);

}  // namespace zicomp
