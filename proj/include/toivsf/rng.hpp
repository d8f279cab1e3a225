#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace toivsf {

// Seedable 64-bit generator. split() derives an independent child stream from
// (seed, stream label) so epochs, runs and fill noise never share draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }
    Rng split(std::uint64_t stream) const;
    Rng split(std::string_view label) const;

    std::uint64_t next_u64() { return engine_(); }
    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    double normal();
    std::size_t below(std::size_t bound);  // [0, bound)

    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace toivsf
