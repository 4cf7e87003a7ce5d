#pragma once

// Seeded randomness shared by TSN sampling and caption sampling. Every
// draw goes through splitmix64 so results are reproducible bit-for-bit.

#include <cstdint>

namespace clipcap {

__extension__ using uint128_t = unsigned __int128;

/// splitmix64 finalizer: a bijective 64-bit mix.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64_mix(state_);
  }

  constexpr std::uint64_t operator()() noexcept { return next(); }

  static constexpr std::uint64_t min() noexcept { return 0; }
  static constexpr std::uint64_t max() noexcept { return ~std::uint64_t{0}; }

  /// Uniform integer in [0, bound) by multiply-high scaling (no rejection).
  /// bound must be positive.
  constexpr std::uint64_t below(std::uint64_t bound) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<uint128_t>(next()) * bound) >> 64);
  }

  /// Uniform real in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  constexpr std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// Seed for the stream at `position` derived from a run seed:
/// the first splitmix64 output of a generator seeded with seed ^ position.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t position) noexcept {
  return SplitMix64(seed ^ position).next();
}

}  // namespace clipcap
