#pragma once

#include <cstdint>
#include <random>

namespace frep {

/// Generator for one purpose (initialization, sampling, mutation, ...) of a
/// seeded computation, so streams do not shift when another one is consumed
/// differently.
inline std::mt19937_64 rng_stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return std::mt19937_64(seq);
}

}  // namespace frep
