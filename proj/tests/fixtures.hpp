#pragma once

#include <vector>

#include "toivsf/config.hpp"
#include "toivsf/data.hpp"
#include "toivsf/trainer.hpp"

namespace fixtures {

inline toivsf::PreparedDataset tiny_dataset(std::size_t n_vars = 6, std::size_t length = 220, std::uint64_t seed = 3) {
    toivsf::SynthConfig s;
    s.n_vars = n_vars;
    s.length = length;
    s.seed = seed;
    return toivsf::prepare_dataset(toivsf::synth_generate(s), 8, 4);
}

inline toivsf::TrainConfig tiny_config(std::size_t epochs = 2) {
    toivsf::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 16;
    c.k = 0.34;
    c.lr = 3e-3;
    c.window_stride = 3;
    c.valid_draws = 2;
    c.imputer.lookback = 8;
    c.imputer.patches = 2;
    c.imputer.embed_dim = 8;
    c.imputer.heads = 2;
    c.imputer.mlp_hidden = 8;
    c.imputer.tcn_channels = 4;
    c.forecaster.lookback = 8;
    c.forecaster.horizon = 4;
    c.forecaster.hidden = 3;
    return c;
}

inline std::vector<toivsf::real> values_of(const toivsf::ParameterStore& store) {
    std::vector<toivsf::real> out;
    for (const toivsf::Parameter& p : store.items()) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
    return out;
}

}  // namespace fixtures
