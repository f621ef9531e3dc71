#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "genret/text.hpp"

namespace genret {

using Rng = std::mt19937_64;

/// Derives an independent, named random stream from a root seed so that adding
/// randomness to one module never shifts the draws of another.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name) {
    std::uint64_t h = text::fnv1a64(name);
    // splitmix64 finalizer over the combined value
    std::uint64_t z = root ^ (h + 0x9e3779b97f4a7c15ULL + (root << 6) + (root >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t root, std::string_view name) {
    return Rng(substream_seed(root, name));
}

/// Uniform double in [0, 1) computed from raw engine output, independent of the
/// standard library's distribution implementations.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

}  // namespace genret
