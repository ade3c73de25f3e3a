#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace zicomp {

// xoshiro256** seeded through splitmix64. Streams are derived by hashing a
// base seed with up to three counters, so that per-cell draws depend only on
// (seed, iteration, step, cell) and never on thread scheduling.
class Rng {
 public:
  using result_type = std::uint64_t;
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();

  const State& state() const { return s_; }
  void set_state(const State& s) { s_ = s; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  State s_{};
};

std::uint64_t splitmix64(std::uint64_t& x);

// Mixes a seed with counters into a new 64-bit seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                          std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace zicomp
