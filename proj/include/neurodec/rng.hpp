#pragma once

#include <cstdint>
#include <random>

#include "neurodec/errors.hpp"

namespace neurodec {

// SplitMix64 step, used to whiten seeds and carve independent streams out of
// one user-facing seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Engine for (seed, stream): distinct streams give unrelated sequences, and
// the mapping is pure, so any consumer order is reproducible.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t state = seed;
    std::uint64_t a = splitmix64(state);
    state ^= stream * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull;
    std::uint64_t b = splitmix64(state);
    return std::mt19937_64(a ^ (b + 0x9E3779B97F4A7C15ull));
}

// Unbiased uniform draw in [0, n) by rejection.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    if (n == 0) throw ValidationError("uniform_below needs a positive bound");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return x % n;
}

}  // namespace neurodec
