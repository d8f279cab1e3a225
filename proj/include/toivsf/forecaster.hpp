#pragma once

#include <memory>
#include <string>

#include "toivsf/optim.hpp"
#include "toivsf/tensor.hpp"

namespace toivsf {

struct ForecasterConfig {
    std::string kind = "mix";  // "mix" or "linear"
    std::size_t num_vars = 0;
    std::size_t lookback = 12;
    std::size_t horizon = 12;
    std::size_t hidden = 8;  // conv channels of the mix backbone

    void validate() const;
};

class Forecaster {
public:
    virtual ~Forecaster() = default;
    // (B, N, L) -> (B, N, Q)
    virtual Tensor forward(const Tensor& x) const = 0;
    const ForecasterConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

protected:
    explicit Forecaster(const ForecasterConfig& cfg);
    void check_input(const Tensor& x) const;

    ForecasterConfig cfg_;
    ParameterStore params_;
};

// One affine map L -> Q shared by every variable.
class LinearForecaster final : public Forecaster {
public:
    LinearForecaster(const ForecasterConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& x) const override;
};

// Causal conv per variable, ReLU, residual N -> N mixing, then an affine
// map from the mixed features plus the raw lookback to Q steps.
class MixForecaster final : public Forecaster {
public:
    MixForecaster(const ForecasterConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& x) const override;
};

std::unique_ptr<Forecaster> make_forecaster(const ForecasterConfig& cfg, Rng& rng);

Tensor forecast_loss(const Tensor& prediction, const Tensor& horizon);

}  // namespace toivsf
