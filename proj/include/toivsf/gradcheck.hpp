#pragma once

#include <functional>
#include <string>
#include <vector>

#include "toivsf/rng.hpp"
#include "toivsf/tensor.hpp"

namespace toivsf {

struct GradCheckOptions {
    real step = real(1e-5);
    // Coordinates sampled per input tensor; 0 checks every coordinate.
    std::size_t coords_per_input = 0;
    std::uint64_t seed = 0;
    // Relative gap between one-sided slopes that marks a non-differentiable
    // point inside the probe. Such coordinates are re-probed at step / 100
    // and skipped if the kink persists.
    real kink_tolerance = real(1e-4);
};

struct GradCheckResult {
    real max_rel_error = 0;
    real max_abs_error = 0;
    std::size_t coords_checked = 0;
    std::size_t coords_refined = 0;
    std::size_t coords_at_kink = 0;
};

// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3). The floor keeps
// coordinates with vanishing gradient from dominating through roundoff.
real relative_error(real analytic, real numeric);

// Compares backward() of the scalar `loss_fn` against central differences
// with respect to each tensor in `inputs` (leaves with requires_grad).
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options = {});

}  // namespace toivsf
