#pragma once

#include <cstdint>
#include <vector>

#include "toivsf/data.hpp"
#include "toivsf/rng.hpp"

namespace toivsf {

// Available-variable indicator for one sampled subset.
struct SubsetMask {
    std::vector<std::uint8_t> available;
    std::size_t subset_size = 0;
    // Replaying sample_subset_tagged(N, k, seed_tag) reproduces this mask.
    std::uint64_t seed_tag = 0;

    std::size_t num_vars() const { return available.size(); }
    bool is_available(std::size_t var) const { return available[var] != 0; }
    std::vector<std::size_t> indices() const;
    bool operator==(const SubsetMask& other) const { return available == other.available; }
};

// max(1, round_half_up(k * N))
std::size_t subset_size(std::size_t num_vars, double k);

SubsetMask sample_subset(std::size_t num_vars, double k, Rng& rng);
SubsetMask sample_subset_tagged(std::size_t num_vars, double k, std::uint64_t seed_tag);
SubsetMask full_mask(std::size_t num_vars);
SubsetMask mask_from_indices(std::size_t num_vars, const std::vector<std::size_t>& indices);

// Zero-filled N-slot view of a window batch plus the mask channel.
struct SubsetBatch {
    Tensor inputs;        // (B, N, L), masked rows exactly zero
    Tensor mask_channel;  // (B, N, 1), 1 = available
    SubsetMask mask;
    Tensor target_full;   // (B, N, L), untouched lookback
};

SubsetBatch apply_mask(const WindowBatch& batch, const SubsetMask& mask);

}  // namespace toivsf
