#include "toivsf/subset.hpp"

#include <algorithm>
#include <cmath>

#include "toivsf/errors.hpp"

namespace toivsf {

std::vector<std::size_t> SubsetMask::indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < available.size(); ++i) {
        if (available[i]) out.push_back(i);
    }
    return out;
}

std::size_t subset_size(std::size_t num_vars, double k) {
    if (!(k > 0) || k > 1) throw ConfigError("subset fraction k must lie in (0, 1]");
    if (num_vars < 1) throw ConfigError("subset sampling needs at least one variable");
    const auto s = static_cast<std::size_t>(std::floor(k * static_cast<double>(num_vars) + 0.5));
    return std::clamp<std::size_t>(s, 1, num_vars);
}

SubsetMask sample_subset_tagged(std::size_t num_vars, double k, std::uint64_t seed_tag) {
    const std::size_t s = subset_size(num_vars, k);
    Rng rng(seed_tag);
    std::vector<std::size_t> order(num_vars);
    for (std::size_t i = 0; i < num_vars; ++i) order[i] = i;
    for (std::size_t i = 0; i < s; ++i) std::swap(order[i], order[i + rng.below(num_vars - i)]);
    SubsetMask mask;
    mask.available.assign(num_vars, 0);
    for (std::size_t i = 0; i < s; ++i) mask.available[order[i]] = 1;
    mask.subset_size = s;
    mask.seed_tag = seed_tag;
    return mask;
}

SubsetMask sample_subset(std::size_t num_vars, double k, Rng& rng) {
    // validate before consuming a draw
    (void)subset_size(num_vars, k);
    return sample_subset_tagged(num_vars, k, rng.next_u64());
}

SubsetMask full_mask(std::size_t num_vars) {
    SubsetMask mask;
    mask.available.assign(num_vars, 1);
    mask.subset_size = num_vars;
    return mask;
}

SubsetMask mask_from_indices(std::size_t num_vars, const std::vector<std::size_t>& indices) {
    SubsetMask mask;
    mask.available.assign(num_vars, 0);
    for (std::size_t i : indices) {
        if (i >= num_vars) throw ConfigError("subset index " + std::to_string(i) + " out of range");
        mask.available[i] = 1;
    }
    mask.subset_size = static_cast<std::size_t>(std::count(mask.available.begin(), mask.available.end(), 1));
    if (mask.subset_size == 0) throw ConfigError("subset must contain at least one variable");
    return mask;
}

SubsetBatch apply_mask(const WindowBatch& batch, const SubsetMask& mask) {
    const Shape& s = batch.lookback.shape();
    const std::size_t b = s[0], n = s[1], len = s[2];
    if (mask.num_vars() != n) {
        throw DimensionError("mask over " + std::to_string(mask.num_vars()) + " variables applied to batch " + shape_str(s));
    }
    std::vector<real> inputs(batch.lookback.values().begin(), batch.lookback.values().end());
    std::vector<real> channel(b * n);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
            channel[r * n + i] = mask.available[i] ? real(1) : real(0);
            if (!mask.available[i]) std::fill_n(inputs.begin() + static_cast<long>((r * n + i) * len), len, real(0));
        }
    }
    SubsetBatch out;
    out.inputs = Tensor(s, std::move(inputs));
    out.mask_channel = Tensor(Shape{b, n, 1}, std::move(channel));
    out.mask = mask;
    out.target_full = batch.lookback;
    return out;
}

}  // namespace toivsf
