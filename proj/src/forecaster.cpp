#include "toivsf/forecaster.hpp"

#include "toivsf/errors.hpp"
#include "toivsf/ops.hpp"

namespace toivsf {

void ForecasterConfig::validate() const {
    if (kind != "mix" && kind != "linear") throw ConfigError("unknown forecaster kind '" + kind + "'");
    if (num_vars < 1) throw ConfigError("forecaster: num_vars must be >= 1");
    if (lookback < 1 || horizon < 1) throw ConfigError("forecaster: lookback and horizon must be >= 1");
    if (hidden < 1) throw ConfigError("forecaster: hidden must be >= 1");
}

Forecaster::Forecaster(const ForecasterConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

void Forecaster::check_input(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[1] != cfg_.num_vars || s[2] != cfg_.lookback) {
        throw DimensionError("forecaster expects (B, " + std::to_string(cfg_.num_vars) + ", " +
                             std::to_string(cfg_.lookback) + "), got " + shape_str(s));
    }
}

LinearForecaster::LinearForecaster(const ForecasterConfig& cfg, Rng& rng) : Forecaster(cfg) {
    params_.add_uniform("forecaster.linear.weight", {cfg_.lookback, cfg_.horizon}, cfg_.lookback, rng);
    params_.add("forecaster.linear.bias", {cfg_.horizon});
}

Tensor LinearForecaster::forward(const Tensor& x) const {
    check_input(x);
    return linear(x, params_.get("forecaster.linear.weight"), params_.get("forecaster.linear.bias"));
}

MixForecaster::MixForecaster(const ForecasterConfig& cfg, Rng& rng) : Forecaster(cfg) {
    const std::size_t h = cfg_.hidden, n = cfg_.num_vars, feat = (h + 1) * cfg_.lookback;
    params_.add_uniform("forecaster.conv.kernel", {h, 1, 3}, 3, rng);
    params_.add("forecaster.conv.bias", {h});
    params_.add_uniform("forecaster.mix.weight", {n, n}, n, rng);
    params_.add_uniform("forecaster.out.weight", {feat, cfg_.horizon}, feat, rng);
    params_.add("forecaster.out.bias", {cfg_.horizon});
}

Tensor MixForecaster::forward(const Tensor& x) const {
    check_input(x);
    const std::size_t b = x.size(0), n = cfg_.num_vars, l = cfg_.lookback, h = cfg_.hidden;
    Tensor x4 = reshape(x, {b, n, 1, l});
    Tensor f = relu(causal_dilated_conv1d(x4, params_.get("forecaster.conv.kernel"),
                                          params_.get("forecaster.conv.bias"), 1));
    // (B, N, H, L) -> (B, H, L, N) so the variable axis is last
    Tensor moved = permute(f, {0, 2, 3, 1});
    Tensor mixed = permute(matmul(moved, params_.get("forecaster.mix.weight")), {0, 3, 1, 2});
    Tensor feats = concat({add(f, mixed), x4}, 2);
    Tensor flat = reshape(feats, {b, n, (h + 1) * l});
    return linear(flat, params_.get("forecaster.out.weight"), params_.get("forecaster.out.bias"));
}

std::unique_ptr<Forecaster> make_forecaster(const ForecasterConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.kind == "linear") return std::make_unique<LinearForecaster>(cfg, rng);
    return std::make_unique<MixForecaster>(cfg, rng);
}

Tensor forecast_loss(const Tensor& prediction, const Tensor& horizon) {
    if (prediction.shape() != horizon.shape()) {
        throw DimensionError("forecast_loss: " + shape_str(prediction.shape()) + " vs " + shape_str(horizon.shape()));
    }
    return mean_abs(prediction, horizon);
}

}  // namespace toivsf
