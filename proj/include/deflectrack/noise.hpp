#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

#include "deflectrack/image.hpp"

namespace deflectrack {

/// splitmix64 finalizer; used to derive independent, order-free RNG streams
/// from (master seed, stream id) so parallel measurements stay reproducible.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::mt19937_64 rng_stream(std::uint64_t master, std::uint64_t stream) {
    return std::mt19937_64(mix_seed(master, stream));
}

/// Shot-noise model: each intensity x is replaced by a Poisson draw with mean
/// x / rel_std^2, scaled back (relative std = rel_std at x = 1; 5% noise means
/// rel_std = 0.05, i.e. mean counts x * 400). Values are clamped to [0,1]
/// afterwards, matching the capture contract.
inline void add_poisson_noise(Image& img, double rel_std, std::mt19937_64& rng) {
    if (rel_std <= 0.0) return;
    const double gain = 1.0 / (rel_std * rel_std);
    for (float& v : img.data) {
        if (v <= 0.f) {
            v = 0.f;
            continue;
        }
        std::poisson_distribution<long> dist(static_cast<double>(v) * gain);
        v = static_cast<float>(std::clamp(dist(rng) / gain, 0.0, 1.0));
    }
}

}  // namespace deflectrack
