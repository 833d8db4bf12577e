#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace vfd {

// Deterministic 64-bit generator (xoshiro256**). Streams are derived by
// hashing (master_seed, seed_index, component_name) so adding a component
// never perturbs existing streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0x9e3779b97f4a7c15ULL);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  int uniform_int(int n);
  // Standard normal via Box-Muller.
  double normal();

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t hash_stream(std::uint64_t master_seed, std::uint64_t seed_index,
                          std::string_view component);

inline Rng derive_rng(std::uint64_t master_seed, std::uint64_t seed_index,
                      std::string_view component) {
  return Rng(hash_stream(master_seed, seed_index, component));
}

}  // namespace vfd
