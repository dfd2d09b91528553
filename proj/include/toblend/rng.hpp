#pragma once

// Deterministic random streams. Every draw helper consumes exactly one
// 64-bit output of the engine so that draw counts are part of the contract.

#include <cstdint>
#include <random>
#include <string_view>

namespace toblend {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed of the per-instance stream for (global seed, instance id, setting).
inline std::uint64_t substream_seed(std::uint64_t global_seed, std::string_view instance_id,
                                    std::string_view setting) {
    std::uint64_t h = splitmix64(global_seed);
    h = splitmix64(h ^ fnv1a64(instance_id));
    h = splitmix64(h ^ fnv1a64(setting));
    return h;
}

/// Uniform integer in [0, n) from one engine output (multiply-high reduction).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const unsigned __int128 wide = static_cast<unsigned __int128>(rng()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
}

/// Uniform double in [0, 1) with 53 random bits from one engine output.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace toblend
