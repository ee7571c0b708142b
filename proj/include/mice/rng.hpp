#pragma once

#include <cstdint>
#include <vector>

namespace mice {

// Deterministic, platform-independent RNG. std::mt19937 plus the standard
// distributions would be simpler, but the distribution implementations are
// not pinned by the C++ standard and outputs must be byte-reproducible
// across toolchains. xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 bits of mantissa.
  double uniform();

  // Standard normal via Box-Muller; the spare value is cached, so draws
  // come in deterministic pairs.
  double normal();

  // Index sampled from an unnormalized non-negative weight vector.
  int categorical(const std::vector<double>& weights);

  // Independent child stream keyed by (id_a, id_b); the parent state is
  // not advanced.
  Rng fork(std::uint64_t id_a, std::uint64_t id_b = 0) const;

 private:
  std::uint64_t s_[4];
  std::uint64_t seed_key_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// Stateless seed derivation used to key per-episode / per-iteration streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t id_a, std::uint64_t id_b = 0);

}  // namespace mice
