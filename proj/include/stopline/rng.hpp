#pragma once

#include <cstdint>
#include <random>

#include "stopline/label.hpp"

namespace stopline {

// SplitMix64 finalizer, used only to mix seed material into stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of replication `rep` of a run seeded with `seed`.
constexpr std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t rep) noexcept {
  return mix64(seed ^ mix64(rep + 0x632be59bd9b4e019ULL));
}

/// Key of the random stream owned by particle `label` in a forest seeded with
/// `seed`. Depends on nothing else, so a subtree's randomness is unaffected by
/// what its siblings or cousins do.
inline std::uint64_t stream_key(std::uint64_t seed, const Label& label) noexcept {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ label.generation());
  for (auto v : label.path())
    h = mix64(h ^ (std::uint64_t{v} + 1));
  return h;
}

using Engine = std::mt19937_64;

inline Engine particle_engine(std::uint64_t seed, const Label& label) {
  return Engine(stream_key(seed, label));
}

} // namespace stopline
