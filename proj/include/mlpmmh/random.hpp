#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

namespace mlpmmh {

/// Seeded random stream. Normal variates use Boost's ziggurat sampler, which
/// is both fast and bit-identical across standard library implementations.
class Rng {
 public:
  using Engine = std::mt19937_64;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }

  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }

  Engine& engine() noexcept { return engine_; }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  Engine engine_;
  boost::random::normal_distribution<double> normal_{};
  boost::random::uniform_01<double> uniform_{};
};

/// Stable 64-bit tag for a string (FNV-1a), used to key seed derivation.
std::uint64_t hash_tag(std::string_view text) noexcept;

/// Derives an independent-looking seed from a master seed and a tuple of
/// tags via repeated splitmix64 mixing. Same inputs always give the same seed.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) noexcept;

}  // namespace mlpmmh
