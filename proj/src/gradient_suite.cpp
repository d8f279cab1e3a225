#include "toivsf/gradient_suite.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "toivsf/errors.hpp"
#include "toivsf/forecaster.hpp"
#include "toivsf/gradcheck.hpp"
#include "toivsf/imputer.hpp"
#include "toivsf/ops.hpp"
#include "toivsf/subset.hpp"

namespace toivsf {

namespace {

Tensor uniform(const Shape& shape, Rng& rng, bool grad = true) {
    std::vector<real> v(shape_numel(shape));
    for (real& x : v) x = real(rng.uniform(-1, 1));
    return Tensor(shape, std::move(v), grad);
}

// keeps relu and |.| kinks out of reach of the probe
Tensor away_from_zero(const Shape& shape, Rng& rng) {
    std::vector<real> v(shape_numel(shape));
    for (real& x : v) {
        const double mag = rng.uniform(0.1, 1.0);
        x = real(rng.uniform() < 0.5 ? -mag : mag);
    }
    return Tensor(shape, std::move(v), true);
}

// zero-initialised biases leave masked rows sitting exactly on relu ties
void jitter_offsets(ParameterStore& ps, Rng& rng) {
    for (Parameter& p : ps.items()) {
        if (!p.name.ends_with(".bias") && !p.name.ends_with(".beta")) continue;
        for (real& v : p.tensor.mutable_values()) v = real(rng.uniform(-0.1, 0.1));
    }
}

struct Case {
    std::function<Tensor()> loss;
    std::vector<Tensor> inputs;
    std::size_t coords_per_input = 0;
};

using CaseBuilder = std::function<Case(Rng&)>;

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

Case binary(Rng& rng, Tensor (*op)(const Tensor&, const Tensor&)) {
    const std::size_t b = dim(rng, 1, 3), m = dim(rng, 1, 4), k = dim(rng, 1, 5);
    Tensor a = uniform({b, m, k}, rng);
    // second operand either full-shaped or a broadcast suffix
    Tensor c = rng.uniform() < 0.5 ? uniform({b, m, k}, rng) : uniform({m, k}, rng);
    Tensor w = uniform({b, m, k}, rng, false);
    return {[=] { return sum(mul(op(a, c), w)); }, {a, c}};
}

const std::map<std::string, CaseBuilder>& builders() {
    static const std::map<std::string, CaseBuilder> table = {
        {"add", [](Rng& r) { return binary(r, add); }},
        {"sub", [](Rng& r) { return binary(r, sub); }},
        {"mul", [](Rng& r) { return binary(r, mul); }},
        {"scale",
         [](Rng& r) {
             Tensor a = uniform({dim(r, 1, 4), dim(r, 1, 5)}, r);
             const real f = real(r.uniform(-2, 2));
             Tensor w = uniform(a.shape(), r, false);
             return Case{[=] { return sum(mul(scale(a, f), w)); }, {a}};
         }},
        {"matmul",
         [](Rng& r) {
             const std::size_t b = dim(r, 1, 3), m = dim(r, 1, 4), k = dim(r, 1, 5), n = dim(r, 1, 4);
             Tensor a = uniform({b, 1, m, k}, r);
             Tensor c = uniform({2, k, n}, r);
             Tensor w = uniform({b, 2, m, n}, r, false);
             return Case{[=] { return sum(mul(matmul(a, c), w)); }, {a, c}};
         }},
        {"linear",
         [](Rng& r) {
             const std::size_t b = dim(r, 1, 3), m = dim(r, 1, 4), k = dim(r, 1, 5), n = dim(r, 1, 4);
             Tensor x = uniform({b, m, k}, r), wt = uniform({k, n}, r), bias = uniform({n}, r);
             Tensor w = uniform({b, m, n}, r, false);
             return Case{[=] { return sum(mul(linear(x, wt, bias), w)); }, {x, wt, bias}};
         }},
        {"reshape",
         [](Rng& r) {
             const std::size_t a0 = dim(r, 1, 3), a1 = dim(r, 1, 4), a2 = dim(r, 1, 4);
             Tensor a = uniform({a0, a1, a2}, r);
             Tensor w = uniform({a0 * a1, a2}, r, false);
             return Case{[=] { return sum(mul(reshape(a, {a0 * a1, a2}), w)); }, {a}};
         }},
        {"permute",
         [](Rng& r) {
             Tensor a = uniform({dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4)}, r);
             Tensor t = permute(a, {2, 0, 1});
             Tensor w = uniform(t.shape(), r, false);
             Tensor w2 = uniform({a.size(1), a.size(0), a.size(2)}, r, false);
             return Case{[=] { return add(sum(mul(permute(a, {2, 0, 1}), w)), sum(mul(transpose(a, 0, 1), w2))); },
                         {a}};
         }},
        {"concat",
         [](Rng& r) {
             const std::size_t b = dim(r, 1, 3), k = dim(r, 1, 4);
             Tensor a = uniform({b, dim(r, 1, 3), k}, r), c = uniform({b, dim(r, 1, 3), k}, r);
             Tensor w = uniform({b, a.size(1) + c.size(1), k}, r, false);
             return Case{[=] { return sum(mul(concat({a, c}, 1), w)); }, {a, c}};
         }},
        {"softmax",
         [](Rng& r) {
             Tensor a = uniform({dim(r, 1, 3), dim(r, 2, 5), dim(r, 2, 5)}, r);
             const std::size_t axis = r.below(3);
             Tensor w = uniform(a.shape(), r, false);
             return Case{[=] { return sum(mul(softmax(scale(a, 2), axis), w)); }, {a}};
         }},
        {"layer_norm",
         [](Rng& r) {
             const std::size_t d = dim(r, 2, 6);
             Tensor x = uniform({dim(r, 1, 3), dim(r, 1, 3), d}, r), g = uniform({d}, r), b = uniform({d}, r);
             Tensor w = uniform(x.shape(), r, false);
             return Case{[=] { return sum(mul(layer_norm(x, g, b, real(1e-5)), w)); }, {x, g, b}};
         }},
        {"relu",
         [](Rng& r) {
             Tensor a = away_from_zero({dim(r, 1, 3), dim(r, 2, 5)}, r);
             Tensor w = uniform(a.shape(), r, false);
             return Case{[=] { return sum(mul(relu(a), w)); }, {a}};
         }},
        {"gelu",
         [](Rng& r) {
             Tensor a = uniform({dim(r, 1, 3), dim(r, 2, 5)}, r);
             Tensor w = uniform(a.shape(), r, false);
             return Case{[=] { return sum(mul(gelu(scale(a, 3)), w)); }, {a}};
         }},
        {"causal_dilated_conv1d",
         [](Rng& r) {
             const std::size_t cin = dim(r, 1, 3), cout = dim(r, 1, 3), kk = dim(r, 1, 3), t = dim(r, 3, 8);
             const std::size_t d = dim(r, 1, 3);
             Tensor x = uniform({dim(r, 1, 2), cin, t}, r), k = uniform({cout, cin, kk}, r), b = uniform({cout}, r);
             Tensor w = uniform({x.size(0), cout, t}, r, false);
             return Case{[=] { return sum(mul(causal_dilated_conv1d(x, k, b, d), w)); }, {x, k, b}};
         }},
        {"mean_abs",
         [](Rng& r) {
             const Shape s{dim(r, 1, 3), dim(r, 1, 5)};
             Tensor a = uniform(s, r);
             Tensor diff = away_from_zero(s, r);
             std::vector<real> cv(a.values().begin(), a.values().end());
             for (std::size_t i = 0; i < cv.size(); ++i) cv[i] += diff.values()[i];
             Tensor c(s, cv, true);
             return Case{[=] { return mean_abs(a, c); }, {a, c}};
         }},
        {"sum",
         [](Rng& r) {
             Tensor a = uniform({dim(r, 1, 3), dim(r, 1, 5)}, r);
             return Case{[=] { return scale(sum(mul(a, a)), real(0.5)); }, {a}};
         }},
        {"mean",
         [](Rng& r) {
             Tensor a = uniform({dim(r, 1, 3), dim(r, 1, 5)}, r);
             return Case{[=] { return mean(mul(a, a)); }, {a}};
         }},
        {"imputer",
         [](Rng& r) {
             ImputerConfig c;
             c.num_vars = dim(r, 2, 4);
             c.lookback = 12;
             c.patches = std::vector<std::size_t>{2, 3, 4}[r.below(3)];
             c.embed_dim = 8;
             c.heads = 2;
             c.mlp_hidden = 12;
             c.tcn_channels = 6;
             auto imp = std::make_shared<Imputer>(c, r);
             jitter_offsets(imp->params(), r);
             WindowBatch wb;
             wb.lookback = uniform({2, c.num_vars, c.lookback}, r, false);
             wb.horizon = Tensor::zeros({2, c.num_vars, 1});
             wb.start_times = {0, 1};
             const SubsetBatch sb = apply_mask(wb, sample_subset(c.num_vars, 0.5, r));
             Tensor w = uniform({2, c.num_vars, c.lookback}, r, false);
             std::vector<Tensor> params;
             for (Parameter& p : imp->params().items()) params.push_back(p.tensor);
             return Case{[=] { return sum(mul(imp->impute(sb), w)); }, params, 8};
         }},
        {"linear_forecaster",
         [](Rng& r) {
             ForecasterConfig c;
             c.kind = "linear";
             c.num_vars = dim(r, 1, 4);
             c.lookback = dim(r, 3, 8);
             c.horizon = dim(r, 1, 4);
             std::shared_ptr<Forecaster> fc = make_forecaster(c, r);
             jitter_offsets(fc->params(), r);
             Tensor x = uniform({2, c.num_vars, c.lookback}, r);
             Tensor w = uniform({2, c.num_vars, c.horizon}, r, false);
             std::vector<Tensor> in{x};
             for (Parameter& p : fc->params().items()) in.push_back(p.tensor);
             return Case{[=] { return sum(mul(fc->forward(x), w)); }, in, 8};
         }},
        {"mix_forecaster",
         [](Rng& r) {
             ForecasterConfig c;
             c.kind = "mix";
             c.num_vars = dim(r, 2, 4);
             c.lookback = dim(r, 3, 8);
             c.horizon = dim(r, 1, 4);
             c.hidden = 3;
             std::shared_ptr<Forecaster> fc = make_forecaster(c, r);
             jitter_offsets(fc->params(), r);
             Tensor x = uniform({2, c.num_vars, c.lookback}, r);
             Tensor w = uniform({2, c.num_vars, c.horizon}, r, false);
             std::vector<Tensor> in{x};
             for (Parameter& p : fc->params().items()) in.push_back(p.tensor);
             return Case{[=] { return sum(mul(fc->forward(x), w)); }, in, 8};
         }},
    };
    return table;
}

}  // namespace

const std::vector<std::string>& gradient_suite_ops() {
    static const std::vector<std::string> names{"add",     "sub",        "mul",  "scale", "matmul",
                                                "linear",  "reshape",    "permute", "concat", "softmax",
                                                "layer_norm", "relu",    "gelu", "causal_dilated_conv1d",
                                                "mean_abs", "sum",       "mean", "imputer", "linear_forecaster",
                                                "mix_forecaster"};
    return names;
}

std::vector<SuiteRow> run_gradient_suite(std::uint64_t seed, const std::vector<std::string>& ops, real tolerance,
                                         std::size_t cases) {
    std::vector<SuiteRow> rows;
    for (const std::string& op : ops) {
        auto it = builders().find(op);
        if (it == builders().end()) throw ConfigError("gradient suite has no op '" + op + "'");
        SuiteRow row;
        row.op = op;
        Rng root = Rng(seed).split(op);
        for (std::size_t c = 0; c < cases; ++c) {
            Rng rng = root.split(c);
            Case k = it->second(rng);
            GradCheckOptions opt;
            opt.coords_per_input = k.coords_per_input;
            opt.seed = mix_seed(seed, c);
            GradCheckResult r = check_gradients(k.loss, k.inputs, opt);
            row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
            row.coords += r.coords_checked;
            row.kinks += r.coords_at_kink;
            ++row.cases;
        }
        row.passed = row.max_rel_error <= tolerance;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace toivsf
