#pragma once

#include "wildsort/common.hpp"

#include <cstdint>
#include <random>

namespace wildsort {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent stream seed for (seed, stream); used so per-k and per-run
/// work gives the same result whether executed serially or in parallel.
constexpr Seed derive_seed(Seed seed, std::uint64_t stream) { return mix64(seed ^ mix64(stream + 1)); }

inline Rng make_rng(Seed seed, std::uint64_t stream) { return Rng(derive_seed(seed, stream)); }

} // namespace wildsort
