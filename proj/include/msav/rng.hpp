#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace msav {

/// Seeded pseudo-random source. All distributions are implemented locally so
/// that streams are bit-identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t uniform_index(std::size_t n);

  /// Standard normal via Box-Muller; second value of each pair is cached.
  double normal();

  /// Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// Stable sub-stream seed for a named purpose ("model", "train", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

}  // namespace msav
