#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace clonemap {

/// Seedable generator with platform-independent draws. The standard
/// distributions are implementation-defined, so reproducible code paths use
/// these helpers instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Requires n > 0.
  std::size_t uniform_index(std::size_t n);

  /// Draw an index with probability proportional to `weights`. Falls back to
  /// the last positive entry on rounding overshoot.
  std::size_t categorical(std::span<const double> weights);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Independent stream seed for (base seed, agent name, trial index).
std::uint64_t derive_seed(std::uint64_t base_seed, std::string_view name,
                          std::uint64_t trial) noexcept;

}  // namespace clonemap
