#include <cmath>
#include <limits>

#include "doctest.h"
#include "toivsf/errors.hpp"
#include "toivsf/gradcheck.hpp"
#include "toivsf/gradient_suite.hpp"
#include "toivsf/ops.hpp"
#include "toivsf/optim.hpp"

using namespace toivsf;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
    std::vector<real> v(shape_numel(shape));
    for (real& x : v) x = static_cast<real>(rng.uniform(lo, hi));
    return Tensor(shape, std::move(v), requires_grad);
}

// Values bounded away from zero so relu / |.| kinks are never crossed by a 1e-5 probe.
Tensor away_from_zero(const Shape& shape, Rng& rng) {
    std::vector<real> v(shape_numel(shape));
    for (real& x : v) {
        const double mag = rng.uniform(0.1, 1.0);
        x = static_cast<real>(rng.uniform() < 0.5 ? -mag : mag);
    }
    return Tensor(shape, std::move(v), true);
}

// Weighted sum with fixed random weights; a non-trivial scalar read-out.
Tensor readout(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng, false)));
}

}  // namespace

TEST_CASE("matmul: hand examples") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor col({2, 1}, {3, 4});
    Tensor out = matmul(eye, col);
    CHECK(out.shape() == Shape{2, 1});
    CHECK(out.values()[0] == 3);
    CHECK(out.values()[1] == 4);

    Tensor row({1, 2}, {1, 2});
    CHECK(matmul(row, col).item() == 11);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    try {
        (void)matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2, 3)") != std::string::npos);
        CHECK(msg.find("by (2, 3)") != std::string::npos);
    }
    CHECK_THROWS_AS((void)matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 4})), DimensionError);
}

TEST_CASE("matmul: grad of sum(A B) wrt A is ones B^T") {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng, false);
    backward(sum(matmul(a, b)));
    auto g = a.grad();
    auto bv = b.values();
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t p = 0; p < 4; ++p) {
            real expect = 0;
            for (std::size_t j = 0; j < 5; ++j) expect += bv[p * 5 + j];
            CHECK(g[i * 4 + p] == doctest::Approx(expect).epsilon(1e-14));
        }
    }
    auto result = check_gradients([&] { return sum(matmul(a, b)); }, {a});
    CHECK(result.max_rel_error <= 1e-6);
}

TEST_CASE("matmul: batched broadcasting matches per-batch products") {
    Rng rng(3);
    Tensor w = random_tensor({3, 3}, rng);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor y = matmul(w, x);
    REQUIRE(y.shape() == Shape{2, 3, 4});
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                real expect = 0;
                for (std::size_t p = 0; p < 3; ++p) expect += w.at({i, p}) * x.at({b, p, j});
                CHECK(y.at({b, i, j}) == doctest::Approx(expect).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("gradient suite: elementwise, layout and matmul ops over random shapes") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const std::size_t b = 1 + rng.below(3), m = 1 + rng.below(4), k = 1 + rng.below(5), n = 1 + rng.below(4);
        CAPTURE(seed);
        {
            Tensor a = random_tensor({b, m, k}, rng);
            Tensor w = random_tensor({k, n}, rng);
            Tensor bias = random_tensor({n}, rng);
            auto r = check_gradients([&] { return readout(linear(a, w, bias), seed); }, {a, w, bias});
            CHECK(r.max_rel_error <= 1e-4);
        }
        {
            Tensor a = random_tensor({b, 1, m, k}, rng);
            Tensor c = random_tensor({2, k, n}, rng);
            auto r = check_gradients([&] { return readout(matmul(a, c), seed); }, {a, c});
            CHECK(r.max_rel_error <= 1e-4);
        }
        {
            Tensor a = random_tensor({b, m, k}, rng);
            Tensor c = random_tensor({m, k}, rng);
            auto r = check_gradients([&] { return readout(mul(sub(a, c), add(a, c)), seed); }, {a, c});
            CHECK(r.max_rel_error <= 1e-4);
        }
        {
            Tensor a = random_tensor({b, m, k}, rng);
            Tensor c = random_tensor({b, 2, k}, rng);
            auto r = check_gradients(
                [&] { return readout(reshape(transpose(concat({a, scale(c, 0.5)}, 1), 0, 2), {k, (m + 2) * b}), seed); },
                {a, c});
            CHECK(r.max_rel_error <= 1e-4);
        }
        {
            Tensor a = random_tensor({b, m, k}, rng);
            auto r = check_gradients([&] { return add(mean(a), scale(sum(permute(a, {2, 0, 1})), 0.3)); }, {a});
            CHECK(r.max_rel_error <= 1e-4);
        }
    }
}

TEST_CASE("layer_norm: examples") {
    Tensor ones = Tensor::full({4}, 1);
    Tensor zeros = Tensor::zeros({4});
    Tensor flat({1, 4}, {5, 5, 5, 5});
    Tensor normed = layer_norm(flat, ones, zeros, 1e-5);
    for (real v : normed.values()) CHECK(std::abs(v) <= 1e-6);

    Tensor pair({1, 2}, {1, 3});
    Tensor y = layer_norm(pair, Tensor::full({2}, 1), Tensor::zeros({2}), 1e-12);
    CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-9));

    CHECK_THROWS_AS((void)layer_norm(pair, Tensor::full({2}, 1), Tensor::zeros({2}), 0.0), ConfigError);
    CHECK_THROWS_AS((void)layer_norm(pair, Tensor::full({3}, 1), Tensor::zeros({3}), 1e-5), DimensionError);
}

TEST_CASE("layer_norm: pre-affine rows standardized; gradients") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(100 + seed);
        const std::size_t rows = 1 + rng.below(4), width = 2 + rng.below(6);
        Tensor x = random_tensor({rows, width}, rng, true, -3, 3);
        Tensor gamma = random_tensor({width}, rng, true, 0.5, 1.5);
        Tensor beta = random_tensor({width}, rng);
        Tensor y = layer_norm(x, Tensor::full({width}, 1), Tensor::zeros({width}), 1e-12);
        for (std::size_t r = 0; r < rows; ++r) {
            real mu = 0, var = 0;
            for (std::size_t j = 0; j < width; ++j) mu += y.at({r, j});
            mu /= static_cast<real>(width);
            for (std::size_t j = 0; j < width; ++j) var += (y.at({r, j}) - mu) * (y.at({r, j}) - mu);
            var /= static_cast<real>(width);
            CHECK(std::abs(mu) <= 1e-9);
            CHECK(std::abs(var - 1) <= 1e-6);
        }
        auto r = check_gradients([&] { return readout(layer_norm(x, gamma, beta, 1e-5), seed); }, {x, gamma, beta});
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("softmax: examples and properties") {
    Tensor even({2}, {0, 0});
    Tensor s = softmax(even, 0);
    CHECK(s.values()[0] == 0.5);
    CHECK(s.values()[1] == 0.5);

    Tensor big({2}, {1000, 0});
    Tensor t = softmax(big, 0);
    CHECK(std::abs(t.values()[0] - 1) <= 1e-12);
    CHECK(std::abs(t.values()[1]) <= 1e-12);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(200 + seed);
        const std::size_t a = 1 + rng.below(3), b = 2 + rng.below(4), c = 1 + rng.below(3);
        const std::size_t axis = rng.below(3);
        Tensor x = random_tensor({a, b, c}, rng, true, -4, 4);
        Tensor y = softmax(x, axis);
        const Shape& sh = y.shape();
        // sums along axis
        for (std::size_t i = 0; i < sh[0]; ++i) {
            for (std::size_t j = 0; j < sh[1]; ++j) {
                for (std::size_t k = 0; k < sh[2]; ++k) {
                    std::size_t idx[3] = {i, j, k};
                    if (idx[axis] != 0) continue;
                    real total = 0;
                    for (std::size_t q = 0; q < sh[axis]; ++q) {
                        idx[axis] = q;
                        const real v = y.at({idx[0], idx[1], idx[2]});
                        CHECK(v >= 0);
                        total += v;
                    }
                    CHECK(std::abs(total - 1) <= 1e-12);
                }
            }
        }
        auto r = check_gradients([&] { return readout(softmax(x, axis), seed); }, {x});
        CHECK(r.max_rel_error <= 1e-4);
    }
    CHECK_THROWS_AS((void)softmax(even, 1), DimensionError);
}

TEST_CASE("causal_dilated_conv1d: examples") {
    Tensor x({1, 1, 3}, {1, 2, 3});
    Tensor identity({1, 1, 2}, {1, 0});
    Tensor delay({1, 1, 2}, {0, 1});
    Tensor bias = Tensor::zeros({1});
    Tensor same = causal_dilated_conv1d(x, identity, bias, 1);
    CHECK(std::vector<real>(same.values().begin(), same.values().end()) == std::vector<real>{1, 2, 3});
    Tensor shifted = causal_dilated_conv1d(x, delay, bias, 1);
    CHECK(std::vector<real>(shifted.values().begin(), shifted.values().end()) == std::vector<real>{0, 1, 2});
    Tensor two = causal_dilated_conv1d(x, delay, bias, 2);
    CHECK(std::vector<real>(two.values().begin(), two.values().end()) == std::vector<real>{0, 0, 1});

    CHECK_THROWS_AS((void)causal_dilated_conv1d(x, delay, bias, 0), ConfigError);
    CHECK_THROWS_AS((void)causal_dilated_conv1d(x, Tensor::zeros({1, 1}), bias, 1), ConfigError);
    CHECK_THROWS_AS((void)causal_dilated_conv1d(x, Tensor::zeros({1, 2, 2}), bias, 1), DimensionError);
}

TEST_CASE("causal_dilated_conv1d: output at t ignores inputs after t") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(300 + seed);
        const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(3), taps = 1 + rng.below(3), time = 4 + rng.below(6);
        const std::size_t dilation = 1 + rng.below(3);
        Tensor x = random_tensor({2, cin, time}, rng, false);
        Tensor k = random_tensor({cout, cin, taps}, rng, false);
        Tensor b = random_tensor({cout}, rng, false);
        Tensor base = causal_dilated_conv1d(x, k, b, dilation);
        const std::size_t cut = rng.below(time);
        Tensor probe = x.clone();
        auto pv = probe.mutable_values();
        for (std::size_t row = 0; row < 2 * cin; ++row) {
            for (std::size_t t = cut + 1; t < time; ++t) pv[row * time + t] += 10.0;
        }
        Tensor moved = causal_dilated_conv1d(probe, k, b, dilation);
        for (std::size_t row = 0; row < 2 * cout; ++row) {
            for (std::size_t t = 0; t <= cut; ++t) CHECK(moved.values()[row * time + t] == base.values()[row * time + t]);
        }
    }
}

TEST_CASE("causal_dilated_conv1d: gradients against finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(400 + seed);
        const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(3), taps = 1 + rng.below(3), time = 3 + rng.below(5);
        const std::size_t dilation = 1 + rng.below(2);
        Tensor x = random_tensor({2, 1 + rng.below(2), cin, time}, rng);
        Tensor k = random_tensor({cout, cin, taps}, rng);
        Tensor b = random_tensor({cout}, rng);
        auto r = check_gradients([&] { return readout(causal_dilated_conv1d(x, k, b, dilation), seed); }, {x, k, b});
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("activations") {
    Tensor x({3}, {-1, 0, 2});
    Tensor r = relu(x);
    CHECK(std::vector<real>(r.values().begin(), r.values().end()) == std::vector<real>{0, 0, 2});
    CHECK(gelu(Tensor::scalar(0)).item() == 0);
    // x * Phi(x) at 1: Phi(1) = 0.841344746068543
    CHECK(gelu(Tensor::scalar(1)).item() == doctest::Approx(0.841344746068543).epsilon(1e-14));

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(500 + seed);
        const Shape shape{1 + rng.below(3), 2 + rng.below(4)};
        Tensor a = away_from_zero(shape, rng);
        auto rg = check_gradients([&] { return readout(gelu(scale(a, 3.0)), seed); }, {a});
        CHECK(rg.max_rel_error <= 1e-4);
        auto rr = check_gradients([&] { return readout(relu(a), seed); }, {a});
        CHECK(rr.max_rel_error <= 1e-4);
    }
}

TEST_CASE("mean_abs") {
    Tensor a({2}, {0, 0});
    Tensor b({2}, {1, 3});
    CHECK(mean_abs(a, a).item() == 0);
    CHECK(mean_abs(a, b).item() == 2);
    CHECK_THROWS_AS((void)mean_abs(a, Tensor::zeros({3})), DimensionError);

    Tensor p({2}, {1, 1}, true);
    Tensor q({2}, {1, 1}, true);
    backward(mean_abs(p, q));
    CHECK(p.grad()[0] == 0);
    CHECK(q.grad()[1] == 0);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(600 + seed);
        const Shape shape{1 + rng.below(3), 2 + rng.below(5)};
        Tensor u = away_from_zero(shape, rng);
        Tensor v = Tensor::zeros(shape, true);
        auto r = check_gradients([&] { return mean_abs(u, v); }, {u, v});
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("backward: examples and tape contract") {
    Tensor p({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor loss = sum(p);
    backward(loss);
    for (real g : p.grad()) CHECK(g == 1);
    CHECK_THROWS_AS(backward(loss), StaleTapeError);

    Tensor q({2}, {1, 2}, true);
    Tensor other({2}, {3, 4}, true);
    q.zero_grad();
    backward(sum(other));
    for (real g : q.grad()) CHECK(g == 0);

    CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), DimensionError);
}

TEST_CASE("tape order is topological and each node appears once") {
    Rng rng(9);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor h = relu(matmul(a, a));
    Tensor loss = sum(add(h, mul(h, a)));
    auto tape = build_tape(loss);
    std::vector<detail::Node*> seen;
    for (detail::Node* node : tape) {
        CHECK(std::find(seen.begin(), seen.end(), node) == seen.end());
        for (const auto& input : node->inputs) {
            if (!input->requires_grad) continue;
            CHECK(std::find(seen.begin(), seen.end(), input.get()) != seen.end());
        }
        seen.push_back(node);
    }
    CHECK(tape.back() == loss.node().get());
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(11);
    Tensor x = random_tensor({4, 5}, rng);
    Tensor w = random_tensor({5, 3}, rng);
    auto l1 = [&] { return readout(gelu(matmul(x, w)), 1); };
    auto l2 = [&] { return mean(softmax(matmul(x, w), 1)); };
    const real ca = 0.7, cb = -1.3;

    w.zero_grad();
    backward(l1());
    std::vector<real> g1(w.grad().begin(), w.grad().end());
    w.zero_grad();
    backward(l2());
    std::vector<real> g2(w.grad().begin(), w.grad().end());
    w.zero_grad();
    backward(add(scale(l1(), ca), scale(l2(), cb)));
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(w.grad()[i] - (ca * g1[i] + cb * g2[i])) <= 1e-10);
}

TEST_CASE("non-finite forward values raise NumericError") {
    Tensor big({2}, {1e300, 1.0});
    CHECK_THROWS_AS((void)scale(big, 1e300), NumericError);
    Tensor nan_in({1}, {std::numeric_limits<real>::quiet_NaN()});
    CHECK_THROWS_AS((void)relu(nan_in), NumericError);
}

TEST_CASE("no-grad guard records nothing") {
    Tensor p({2}, {1, 2}, true);
    NoGradGuard guard;
    Tensor y = scale(p, 2.0);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam: examples") {
    ParameterStore store;
    store.add_constant("w", {3}, 2.0);
    std::vector<Parameter*> params = collect({&store});
    {
        AdamState state;
        adam_step(params, state, AdamConfig{});
        for (real v : store.get("w").values()) CHECK(v == 2.0);
    }
    {
        ParameterStore s;
        Tensor w = s.add_constant("w", {1}, 0.0);
        std::vector<Parameter*> ps = collect({&s});
        w.mutable_grad()[0] = 1.0;
        AdamState state;
        AdamConfig cfg;
        cfg.lr = 0.1;
        adam_step(ps, state, cfg);
        CHECK(w.values()[0] == doctest::Approx(-0.1).epsilon(1e-6));
    }
}

TEST_CASE("adam: 200 steps on (w-3)^2 match the scalar recurrence and converge") {
    ParameterStore s;
    Tensor w = s.add_constant("w", {1}, 0.0);
    Adam opt(collect({&s}), AdamConfig{0.1, 0.9, 0.999, 1e-8});

    // Independent scalar recurrence
    double ref = 0, m = 0, v = 0;
    for (int t = 1; t <= 200; ++t) {
        opt.zero_grad();
        Tensor diff = sub(w, Tensor::scalar(3.0));
        backward(sum(mul(diff, diff)));
        opt.step();

        const double g = 2 * (ref - 3);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t));
        const double vh = v / (1 - std::pow(0.999, t));
        ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(w.values()[0] == doctest::Approx(ref).epsilon(1e-12));
    }
    CHECK(std::abs(w.values()[0] - 3) < 0.05);
}

TEST_CASE("grad clipping bounds the global norm") {
    ParameterStore s;
    Tensor a = s.add("a", {2});
    Tensor b = s.add("b", {1});
    a.mutable_grad()[0] = 3;
    a.mutable_grad()[1] = 4;
    b.mutable_grad()[0] = 12;
    auto ps = collect({&s});
    CHECK(clip_grad_norm(ps, 5.0) == doctest::Approx(13.0));
    CHECK(global_grad_norm(ps) == doctest::Approx(5.0));
}

TEST_CASE("parameter names are unique") {
    ParameterStore s;
    s.add("x", {1});
    CHECK_THROWS_AS(s.add("x", {2}), ConfigError);
}

TEST_CASE("fixed seed gives bit-identical buffers") {
    auto run = [] {
        Rng rng(42);
        ParameterStore s;
        s.add_uniform("w", {6, 4}, 6, rng);
        Tensor x = random_tensor({3, 6}, rng, false);
        Tensor y = gelu(matmul(x, s.get("w")));
        return std::vector<real>(y.values().begin(), y.values().end());
    };
    CHECK(run() == run());
}

TEST_CASE("library gradient suite passes and catches a broken rule") {
    auto rows = run_gradient_suite(7, gradient_suite_ops());
    REQUIRE(rows.size() == gradient_suite_ops().size());
    for (const SuiteRow& r : rows) {
        INFO(r.op);
        CHECK(r.passed);
        CHECK(r.cases == 5);
    }
    testing::set_gradient_fault("softmax");
    auto broken = run_gradient_suite(7, {"softmax", "gelu"});
    testing::clear_gradient_fault();
    CHECK_FALSE(broken[0].passed);
    CHECK(broken[1].passed);
    CHECK_THROWS_AS(run_gradient_suite(0, {"conv3d"}), ConfigError);
}

TEST_CASE("a probe straddling a relu kink is re-probed closer in") {
    Tensor x({1}, {real(3e-6)}, true);
    auto r = check_gradients([&] { return relu(x); }, {x});
    CHECK(r.coords_refined == 1);
    CHECK(r.coords_at_kink == 0);
    CHECK(r.max_rel_error <= 1e-6);

    Tensor at({1}, {real(0)}, true);
    auto k = check_gradients([&] { return relu(at); }, {at});
    CHECK(k.coords_at_kink == 1);
    CHECK(k.coords_checked == 0);
}
