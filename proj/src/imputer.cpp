#include "toivsf/imputer.hpp"

#include <cmath>

#include "toivsf/errors.hpp"
#include "toivsf/ops.hpp"

namespace toivsf {

void ImputerConfig::validate() const {
    if (num_vars < 1) throw ConfigError("imputer: num_vars must be >= 1");
    if (lookback < 1) throw ConfigError("imputer: lookback must be >= 1");
    if (patches < 1 || lookback % patches != 0) {
        throw ConfigError("imputer: patch count " + std::to_string(patches) + " does not divide lookback " +
                          std::to_string(lookback));
    }
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
        throw ConfigError("imputer: embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (mlp_hidden < 1) throw ConfigError("imputer: mlp_hidden must be >= 1");
    if (tcn_kernel < 1) throw ConfigError("imputer: tcn_kernel must be >= 1");
    if (tcn_dilations[0] < 1 || tcn_dilations[1] < 1) throw ConfigError("imputer: dilations must be >= 1");
    if (tcn_channels < 1) throw ConfigError("imputer: tcn_channels must be >= 1");
    if (!(ln_eps > 0)) throw ConfigError("imputer: ln_eps must be > 0");
}

Tensor patchify(const Tensor& x, std::size_t patches) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw DimensionError("patchify expects (B, N, L), got " + shape_str(s));
    if (patches < 1 || s[2] % patches != 0) {
        throw ConfigError("patchify: lookback " + std::to_string(s[2]) + " is not divisible by " +
                          std::to_string(patches) + " patches");
    }
    return reshape(x, {s[0], s[1], patches, s[2] / patches});
}

Tensor unpatchify(const Tensor& patches) {
    const Shape& s = patches.shape();
    if (s.size() != 4) throw DimensionError("unpatchify expects (B, N, P, len), got " + shape_str(s));
    return reshape(patches, {s[0], s[1], s[2] * s[3]});
}

Imputer::Imputer(const ImputerConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t e = cfg_.embed_dim, m = cfg_.mlp_hidden, c = cfg_.tcn_channels, k = cfg_.tcn_kernel;
    const std::size_t cin = e + 1, n = cfg_.num_vars;
    auto& ps = params_;
    ps.add_uniform("imputer.embed.weight", {cfg_.patch_len(), e}, cfg_.patch_len(), rng);
    ps.add("imputer.embed.bias", {e});
    for (const char* proj : {"query", "key", "value", "output"}) {
        ps.add_uniform(std::string("imputer.msa.") + proj + ".weight", {e, e}, e, rng);
        ps.add(std::string("imputer.msa.") + proj + ".bias", {e});
    }
    ps.add_constant("imputer.ln1.gamma", {e}, 1);
    ps.add("imputer.ln1.beta", {e});
    ps.add_uniform("imputer.mlp.fc1.weight", {e, m}, e, rng);
    ps.add("imputer.mlp.fc1.bias", {m});
    ps.add_uniform("imputer.mlp.fc2.weight", {m, e}, m, rng);
    ps.add("imputer.mlp.fc2.bias", {e});
    ps.add_constant("imputer.ln2.gamma", {e}, 1);
    ps.add("imputer.ln2.beta", {e});
    // block 1 maps back to its input width so the residual sum is defined
    ps.add_uniform("imputer.tcn.block1.conv1.kernel", {c, cin, k}, cin * k, rng);
    ps.add("imputer.tcn.block1.conv1.bias", {c});
    ps.add_uniform("imputer.tcn.block1.conv2.kernel", {cin, c, k}, c * k, rng);
    ps.add("imputer.tcn.block1.conv2.bias", {cin});
    ps.add_uniform("imputer.tcn.block2.conv1.kernel", {c, cin, k}, cin * k, rng);
    ps.add("imputer.tcn.block2.conv1.bias", {c});
    ps.add_uniform("imputer.tcn.block2.conv2.kernel", {c, c, k}, c * k, rng);
    ps.add("imputer.tcn.block2.conv2.bias", {c});
    const std::size_t feat = c * cfg_.patches;
    ps.add_uniform("imputer.head.weight", {feat, cfg_.lookback}, feat, rng);
    ps.add("imputer.head.bias", {cfg_.lookback});
    if (cfg_.mix_variables) {
        Tensor w = ps.add_uniform("imputer.head.mix.weight", {n, n}, n, rng);
        auto vals = w.mutable_values();
        for (std::size_t i = 0; i < n; ++i) vals[i * n + i] += 1;
        ps.add("imputer.head.mix.bias", {n});
    }
}

Tensor Imputer::time_embed(const Tensor& patches) const {
    return linear(patches, p("imputer.embed.weight"), p("imputer.embed.bias"));
}

Tensor Imputer::time_attention(const Tensor& embedded, Tensor* attn_out) const {
    const Shape& s = embedded.shape();
    const std::size_t bn = s[0] * s[1], np = s[2], e = s[3], h = cfg_.heads, dh = e / h;
    Tensor x = reshape(embedded, {bn, np, e});
    auto heads_of = [&](const char* proj) {
        Tensor y = linear(x, p((std::string("imputer.msa.") + proj + ".weight").c_str()),
                          p((std::string("imputer.msa.") + proj + ".bias").c_str()));
        return permute(reshape(y, {bn, np, h, dh}), {0, 2, 1, 3});
    };
    Tensor q = heads_of("query");
    Tensor k = heads_of("key");
    Tensor v = heads_of("value");
    Tensor scores = scale(matmul(q, transpose(k, 2, 3)), real(1) / std::sqrt(static_cast<real>(dh)));
    Tensor weights = softmax(scores, 3);
    if (attn_out) *attn_out = weights;
    Tensor ctx = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {bn, np, e});
    Tensor attended = linear(ctx, p("imputer.msa.output.weight"), p("imputer.msa.output.bias"));
    Tensor z = layer_norm(add(x, attended), p("imputer.ln1.gamma"), p("imputer.ln1.beta"), cfg_.ln_eps);
    Tensor hidden = gelu(linear(z, p("imputer.mlp.fc1.weight"), p("imputer.mlp.fc1.bias")));
    Tensor mlp = linear(hidden, p("imputer.mlp.fc2.weight"), p("imputer.mlp.fc2.bias"));
    Tensor out = layer_norm(add(z, mlp), p("imputer.ln2.gamma"), p("imputer.ln2.beta"), cfg_.ln_eps);
    return reshape(out, s);
}

Tensor Imputer::tcn_input(const Tensor& attended, const Tensor& mask_channel) const {
    const Shape& s = attended.shape();
    const std::size_t b = s[0], n = s[1], np = s[2];
    if (mask_channel.shape() != Shape{b, n, 1}) {
        throw DimensionError("mask channel " + shape_str(mask_channel.shape()) + " does not match features " +
                             shape_str(s));
    }
    std::vector<real> m(b * n * np);
    auto mv = mask_channel.values();
    for (std::size_t r = 0; r < b * n; ++r) {
        for (std::size_t t = 0; t < np; ++t) m[r * np + t] = mv[r];
    }
    // channels = embedding features, time = patch position
    return concat({permute(attended, {0, 1, 3, 2}), Tensor({b, n, 1, np}, std::move(m))}, 2);
}

Tensor Imputer::block1_from_input(const Tensor& input) const {
    const std::size_t d = cfg_.tcn_dilations[0];
    Tensor h = relu(causal_dilated_conv1d(input, p("imputer.tcn.block1.conv1.kernel"),
                                          p("imputer.tcn.block1.conv1.bias"), d));
    return relu(causal_dilated_conv1d(h, p("imputer.tcn.block1.conv2.kernel"), p("imputer.tcn.block1.conv2.bias"), d));
}

Tensor Imputer::tcn_block1(const Tensor& attended, const Tensor& mask_channel) const {
    return block1_from_input(tcn_input(attended, mask_channel));
}

Tensor Imputer::tcn_features(const Tensor& attended, const Tensor& mask_channel) const {
    Tensor input = tcn_input(attended, mask_channel);
    Tensor residual = add(input, block1_from_input(input));
    const std::size_t d = cfg_.tcn_dilations[1];
    Tensor h = relu(causal_dilated_conv1d(residual, p("imputer.tcn.block2.conv1.kernel"),
                                          p("imputer.tcn.block2.conv1.bias"), d));
    return relu(causal_dilated_conv1d(h, p("imputer.tcn.block2.conv2.kernel"), p("imputer.tcn.block2.conv2.bias"), d));
}

Tensor Imputer::generate_variables(const Tensor& attended, const Tensor& mask_channel) const {
    Tensor feats = tcn_features(attended, mask_channel);
    const Shape& s = feats.shape();
    Tensor flat = reshape(feats, {s[0], s[1], s[2] * s[3]});
    Tensor per_var = gelu(linear(flat, p("imputer.head.weight"), p("imputer.head.bias")));
    if (!cfg_.mix_variables) return per_var;
    // (B, N, L) -> (B, L, N), mix over variables, back
    Tensor mixed = linear(permute(per_var, {0, 2, 1}), p("imputer.head.mix.weight"), p("imputer.head.mix.bias"));
    return permute(mixed, {0, 2, 1});
}

Tensor Imputer::impute(const Tensor& inputs, const Tensor& mask_channel) const {
    const Shape& s = inputs.shape();
    if (s.size() != 3 || s[1] != cfg_.num_vars || s[2] != cfg_.lookback) {
        throw DimensionError("imputer expects (B, " + std::to_string(cfg_.num_vars) + ", " +
                             std::to_string(cfg_.lookback) + "), got " + shape_str(s));
    }
    Tensor e = time_embed(patchify(inputs, cfg_.patches));
    return generate_variables(time_attention(e), mask_channel);
}

Tensor Imputer::impute(const SubsetBatch& batch) const { return impute(batch.inputs, batch.mask_channel); }

Tensor imputation_loss(const Tensor& reconstruction, const Tensor& target_full) {
    if (reconstruction.shape() != target_full.shape()) {
        throw DimensionError("imputation_loss: " + shape_str(reconstruction.shape()) + " vs " +
                             shape_str(target_full.shape()));
    }
    return mean_abs(reconstruction, target_full);
}

}  // namespace toivsf
