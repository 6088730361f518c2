#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tsc {

using Rng = std::mt19937_64;

/// Mixes a master seed with a label and an index into an independent stream
/// seed. The label is hashed with FNV-1a, then master, hash and index are
/// folded through three rounds of splitmix64.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0);

inline Rng make_stream(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
    return Rng(derive_seed(master, label, index));
}

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). One draw per call; n must be > 0.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

inline bool bernoulli(Rng& rng, double p) {
    return uniform01(rng) < p;
}

} // namespace tsc
