#include "toivsf/rng.hpp"

#include <cmath>

namespace toivsf {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed, 0)) {}

Rng Rng::split(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream + 1)); }

Rng Rng::split(std::string_view label) const {
    // FNV-1a of the label
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return split(h);
}

double Rng::uniform() {
    // 53 random mantissa bits
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // Box-Muller, one normal per call.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
}

std::size_t Rng::below(std::size_t bound) {
    // Rejection sampling; unbiased for any bound.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return static_cast<std::size_t>(v % bound);
}

}  // namespace toivsf
