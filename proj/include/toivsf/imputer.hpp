#pragma once

#include <array>
#include <cstdint>

#include "toivsf/optim.hpp"
#include "toivsf/subset.hpp"
#include "toivsf/tensor.hpp"

namespace toivsf {

struct ImputerConfig {
    std::size_t num_vars = 0;
    std::size_t lookback = 12;
    std::size_t patches = 4;
    std::size_t embed_dim = 32;
    std::size_t heads = 4;
    std::size_t mlp_hidden = 64;
    std::size_t tcn_kernel = 3;
    std::array<std::size_t, 2> tcn_dilations{1, 2};
    std::size_t tcn_channels = 32;
    // false replaces the cross-variable output stage with identity
    bool mix_variables = true;
    real ln_eps = real(1e-5);

    std::size_t patch_len() const { return lookback / patches; }
    // Throws ConfigError naming the first violated constraint.
    void validate() const;
};

// (B, N, L) -> (B, N, P, L/P); throws ConfigError when P does not divide L.
Tensor patchify(const Tensor& x, std::size_t patches);
Tensor unpatchify(const Tensor& patches);

class Imputer {
public:
    Imputer(const ImputerConfig& cfg, Rng& rng);

    const ImputerConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    Tensor time_embed(const Tensor& patches) const;
    // Post-norm block over the patch axis. When attn_out is given it receives
    // the softmax weights, shaped (B*N, heads, P, P).
    Tensor time_attention(const Tensor& embedded, Tensor* attn_out = nullptr) const;
    // Output of the second convolution block, (B, N, C, P).
    Tensor tcn_features(const Tensor& attended, const Tensor& mask_channel) const;
    // Activations of the first block, (B, N, E+1, P).
    Tensor tcn_block1(const Tensor& attended, const Tensor& mask_channel) const;
    Tensor generate_variables(const Tensor& attended, const Tensor& mask_channel) const;

    // Reconstruction of all N lookback rows, (B, N, L).
    Tensor impute(const SubsetBatch& batch) const;
    Tensor impute(const Tensor& inputs, const Tensor& mask_channel) const;

private:
    Tensor tcn_input(const Tensor& attended, const Tensor& mask_channel) const;
    Tensor block1_from_input(const Tensor& input) const;
    const Tensor& p(const char* name) const { return params_.get(name); }

    ImputerConfig cfg_;
    ParameterStore params_;
};

Tensor imputation_loss(const Tensor& reconstruction, const Tensor& target_full);

}  // namespace toivsf
