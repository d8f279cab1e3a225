#include <cmath>

#include "doctest.h"
#include "toivsf/errors.hpp"
#include "toivsf/forecaster.hpp"
#include "toivsf/gradcheck.hpp"
#include "toivsf/ops.hpp"

using namespace toivsf;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad = false) {
    std::vector<real> v(shape_numel(shape));
    for (real& x : v) x = static_cast<real>(rng.uniform(-1, 1));
    return Tensor(shape, std::move(v), requires_grad);
}

std::vector<real> copy(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void fill(Tensor& t, real value) {
    for (real& v : t.mutable_values()) v = value;
}

ForecasterConfig config(const std::string& kind, std::size_t n, std::size_t l = 12, std::size_t q = 12) {
    ForecasterConfig c;
    c.kind = kind;
    c.num_vars = n;
    c.lookback = l;
    c.horizon = q;
    c.hidden = 4;
    return c;
}

Tensor readout(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace

TEST_CASE("linear forecaster examples") {
    Rng rng(1);
    LinearForecaster f(config("linear", 3, 12, 6), rng);
    fill(f.params().get("forecaster.linear.weight"), 0);
    auto b = f.params().get("forecaster.linear.bias").mutable_values();
    for (std::size_t q = 0; q < 6; ++q) b[q] = static_cast<real>(q) - 2;
    Tensor out = f.forward(random_tensor({2, 3, 12}, rng));
    CHECK(out.shape() == Shape{2, 3, 6});
    for (std::size_t k = 0; k < out.numel(); ++k) CHECK(out.values()[k] == b[k % 6]);

    LinearForecaster id(config("linear", 3), rng);
    auto w = id.params().get("forecaster.linear.weight").mutable_values();
    std::fill(w.begin(), w.end(), real(0));
    for (std::size_t i = 0; i < 12; ++i) w[i * 12 + i] = 1;
    fill(id.params().get("forecaster.linear.bias"), 0);
    Tensor x = random_tensor({2, 3, 12}, rng);
    CHECK(copy(id.forward(x)) == copy(x));
    CHECK_THROWS_AS((void)id.forward(random_tensor({2, 4, 12}, rng)), DimensionError);
}

TEST_CASE("forecaster gradients match central differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (const char* kind : {"linear", "mix"}) {
            Rng rng(seed * 7 + 1);
            auto f = make_forecaster(config(kind, 3), rng);
            Tensor x = random_tensor({2, 3, 12}, rng, true);
            std::vector<Tensor> inputs{x};
            for (Parameter& p : f->params().items()) inputs.push_back(p.tensor);
            GradCheckOptions opt;
            opt.coords_per_input = 10;
            opt.seed = seed;
            auto r = check_gradients([&] { return readout(f->forward(x), seed); }, inputs, opt);
            INFO(kind);
            CHECK(r.max_rel_error <= 1e-4);
        }
    }
}

TEST_CASE("mix forecaster: zero mixing leaves the per-variable path") {
    Rng rng(2);
    MixForecaster f(config("mix", 4), rng);
    fill(f.params().get("forecaster.mix.weight"), 0);
    Tensor x = random_tensor({2, 4, 12}, rng);
    Tensor out = f.forward(x);
    // per-variable reference: one variable at a time through a 1-variable model with the same weights
    ForecasterConfig c1 = config("mix", 1);
    Rng other(3);
    MixForecaster single(c1, other);
    for (const char* name : {"forecaster.conv.kernel", "forecaster.conv.bias", "forecaster.out.weight", "forecaster.out.bias"}) {
        auto src = f.params().get(name).values();
        auto dst = single.params().get(name).mutable_values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    fill(single.params().get("forecaster.mix.weight"), 0);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < 4; ++i) {
            std::vector<real> row(x.values().begin() + static_cast<long>((b * 4 + i) * 12),
                                  x.values().begin() + static_cast<long>((b * 4 + i + 1) * 12));
            Tensor y = single.forward(Tensor({1, 1, 12}, row));
            for (std::size_t q = 0; q < 12; ++q) CHECK(std::abs(y.values()[q] - out.values()[(b * 4 + i) * 12 + q]) <= 1e-12);
        }
    }
}

TEST_CASE("cross-variable probe: mix is live, linear is not") {
    Rng rng(4);
    auto mix = make_forecaster(config("mix", 3), rng);
    auto lin = make_forecaster(config("linear", 3), rng);
    Tensor x = random_tensor({1, 3, 12}, rng);
    std::vector<real> v = copy(x);
    for (std::size_t t = 0; t < 12; ++t) v[2 * 12 + t] += 0.5;
    Tensor xp(x.shape(), v);
    auto var0 = [](const Tensor& y) { return std::vector<real>(y.values().begin(), y.values().begin() + 12); };
    CHECK(var0(mix->forward(x)) != var0(mix->forward(xp)));
    CHECK(var0(lin->forward(x)) == var0(lin->forward(xp)));
}

TEST_CASE("forecaster contract over random configs") {
    Rng pick(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 1 + pick.below(6), l = 2 + pick.below(20), q = 1 + pick.below(20), b = 1 + pick.below(4);
        for (const char* kind : {"linear", "mix"}) {
            Rng rng(static_cast<std::uint64_t>(trial));
            auto f = make_forecaster(config(kind, n, l, q), rng);
            Tensor x = random_tensor({b, n, l}, pick);
            Tensor y = f->forward(x);
            CHECK(y.shape() == Shape{b, n, q});
            CHECK(copy(y) == copy(f->forward(x)));
        }
    }
    ForecasterConfig bad = config("lstm", 2);
    Rng rng(0);
    CHECK_THROWS_AS((void)make_forecaster(bad, rng), ConfigError);
}

TEST_CASE("forecast_loss examples and oracle") {
    Rng rng(6);
    Tensor h = random_tensor({2, 3, 12}, rng);
    CHECK(forecast_loss(h, h).item() == 0);
    std::vector<real> off = copy(h);
    for (real& v : off) v += 2;
    CHECK(forecast_loss(Tensor(h.shape(), off), h).item() == doctest::Approx(2.0).epsilon(1e-14));
    Tensor p = random_tensor({2, 3, 12}, rng);
    double oracle = 0;
    for (std::size_t k = 0; k < p.numel(); ++k) oracle += std::abs(p.values()[k] - h.values()[k]);
    CHECK(std::abs(forecast_loss(p, h).item() - oracle / static_cast<double>(p.numel())) <= 1e-12);
}
