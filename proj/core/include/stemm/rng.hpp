#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace stemm {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer over a pair of words. Used to derive independent
/// streams (per step, per utterance, per dropout site) from a base seed.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a, for deriving seeds from stream names.
constexpr std::uint64_t name_seed(std::string_view name) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Maps 64 random bits to [0, 1) using the top 53 bits.
constexpr double unit_interval(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
  return Rng(mix_seed(seed, name_seed(stream)));
}

/// Uniform draw in [0, 1) whose value depends only on the engine state.
inline double uniform01(Rng& rng) { return unit_interval(rng()); }

/// Standard normal draw (Box-Muller); portable across standard libraries,
/// unlike std::normal_distribution.
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace stemm
