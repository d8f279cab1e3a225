#include "toivsf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "toivsf/errors.hpp"

namespace toivsf {

real relative_error(real analytic, real numeric) {
    const real denom = std::max({std::abs(analytic), std::abs(numeric), real(1e-3)});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
    std::vector<Tensor> leaves = inputs;
    for (Tensor& t : leaves) {
        if (!t.requires_grad()) throw ConfigError("check_gradients: input does not require grad");
        t.zero_grad();
    }
    backward(loss_fn());
    std::vector<std::vector<real>> analytic;
    for (const Tensor& t : leaves) analytic.emplace_back(t.grad().begin(), t.grad().end());

    GradCheckResult result;
    Rng rng(options.seed);
    NoGradGuard no_grad;
    const real base = loss_fn().item();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        Tensor& t = leaves[i];
        std::vector<std::size_t> coords(t.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.coords_per_input > 0 && options.coords_per_input < coords.size()) {
            // partial Fisher-Yates
            for (std::size_t j = 0; j < options.coords_per_input; ++j) {
                std::swap(coords[j], coords[j + rng.below(coords.size() - j)]);
            }
            coords.resize(options.coords_per_input);
        }
        auto values = t.mutable_values();
        for (std::size_t c : coords) {
            const real saved = values[c];
            // returns the gap between the one-sided slopes
            auto probe = [&](real h, real& numeric) {
                values[c] = saved + h;
                const real up = loss_fn().item();
                values[c] = saved - h;
                const real down = loss_fn().item();
                values[c] = saved;
                numeric = (up - down) / (real(2) * h);
                return std::abs((up - base) / h - (base - down) / h);
            };
            real numeric = 0;
            const real gap = probe(options.step, numeric);
            // a relu or |.| kink inside the probe; smooth curvature shrinks the gap with the step, a kink doesn't
            if (gap > options.kink_tolerance * std::max({real(1e-3), std::abs(numeric)})) {
                ++result.coords_refined;
                if (probe(options.step * real(1e-2), numeric) > real(0.1) * gap) {
                    ++result.coords_at_kink;
                    continue;
                }
            }
            const real a = analytic[i][c];
            result.max_rel_error = std::max(result.max_rel_error, relative_error(a, numeric));
            result.max_abs_error = std::max(result.max_abs_error, std::abs(a - numeric));
            ++result.coords_checked;
        }
    }
    return result;
}

}  // namespace toivsf
