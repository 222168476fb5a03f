#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "blindeq/diff.hpp"
#include "blindeq/dsp.hpp"

using namespace blindeq;
using Catch::Approx;

TEST_CASE("adam: zero gradient and zero lr leave parameters unchanged") {
    ParamTensor p = ParamTensor::zeros("p", {4});
    p.values = {1.0, -2.0, 0.5, 3.0};
    AdamState s = AdamState::for_param(p);
    auto before = p.values;
    adam_step(p, s, 0.01);
    REQUIRE(p.values == before);

    p.grad = {1.0, 1.0, 1.0, 1.0};
    adam_step(p, s, 0.0);
    REQUIRE(p.values == before);
}

TEST_CASE("adam: bias-corrected first step has magnitude ~ lr") {
    ParamTensor p = ParamTensor::zeros("p", {1});
    p.values = {1.0};
    p.grad = {0.5};
    AdamState s = AdamState::for_param(p);
    adam_step(p, s, 0.01);
    const double step1 = std::abs(1.0 - p.values[0]);
    REQUIRE(step1 == Approx(0.01).epsilon(1e-6));

    const double prev = p.values[0];
    p.grad = {0.5};
    adam_step(p, s, 0.01);
    const double step2 = std::abs(prev - p.values[0]);
    REQUIRE(step2 >= step1 * 0.99);
}

TEST_CASE("mlp forward: zero net, identity layer, hand-computed 2-4-2") {
    SECTION("zero weights give zero output") {
        MlpSpec spec{{3, 5, 2}};
        SeededRng rng(1);
        MlpParams params = mlp_init(spec, rng);
        for (auto& w : params.weights)
            std::fill(w.values.begin(), w.values.end(), 0.0);
        std::vector<double> out;
        mlp_forward(spec, params, {1.0, -2.0, 3.0}, out);
        REQUIRE(out == std::vector<double>{0.0, 0.0});
    }
    SECTION("identity-configured single linear layer") {
        MlpSpec spec{{3, 3}};
        SeededRng rng(2);
        MlpParams params = mlp_init(spec, rng);
        for (std::size_t i = 0; i < 3; ++i) params.weights[0].values[i * 3 + i] = 1.0;
        std::vector<double> out;
        mlp_forward(spec, params, {0.25, -1.5, 2.0}, out);
        REQUIRE(out[0] == Approx(0.25));
        REQUIRE(out[1] == Approx(-1.5));
        REQUIRE(out[2] == Approx(2.0));
    }
    SECTION("hand-computed ReLU case") {
        MlpSpec spec{{2, 4, 2}};
        SeededRng rng(3);
        MlpParams params = mlp_init(spec, rng);
        params.weights[0].values = {1, 2, -1, 0.5, 0.25, -0.75, 0, 1};
        params.biases[0].values = {0.1, -0.2, 0.0, 0.5};
        params.weights[1].values = {1, 2, 3, 4, -1, 0, 0.5, 0};
        params.biases[1].values = {0.25, -0.75};
        std::vector<double> out;
        mlp_forward(spec, params, {1.0, -1.0}, out);
        // hidden pre-activations: -0.9, -1.7, 1.0, -0.5 -> ReLU (0, 0, 1, 0)
        REQUIRE(out[0] == Approx(3.25));
        REQUIRE(out[1] == Approx(-0.25));
    }
    SECTION("width mismatch throws") {
        MlpSpec spec{{2, 2}};
        SeededRng rng(4);
        MlpParams params = mlp_init(spec, rng);
        std::vector<double> out;
        REQUIRE_THROWS_AS(mlp_forward(spec, params, {1.0, 2.0, 3.0}, out), std::invalid_argument);
    }
}

TEST_CASE("mlp backward: affine case and ReLU gradient blocking") {
    MlpSpec spec{{2, 2}};
    SeededRng rng(5);
    MlpParams params = mlp_init(spec, rng);
    params.weights[0].values = {0.5, -1.0, 2.0, 0.25};
    std::vector<double> out;
    MlpTape tape;
    const std::vector<double> x = {2.0, -3.0};
    mlp_forward(spec, params, x, out, &tape);
    std::vector<double> og = {1.0, -2.0};
    mlp_backward(spec, params, tape, og);
    // d loss / d W[o][i] = out_grad[o] * x[i]
    REQUIRE(params.weights[0].grad[0] == Approx(1.0 * 2.0));
    REQUIRE(params.weights[0].grad[1] == Approx(1.0 * -3.0));
    REQUIRE(params.weights[0].grad[2] == Approx(-2.0 * 2.0));
    REQUIRE(params.weights[0].grad[3] == Approx(-2.0 * -3.0));
    REQUIRE(params.biases[0].grad[0] == Approx(1.0));
    REQUIRE(params.biases[0].grad[1] == Approx(-2.0));

    MlpSpec rspec{{1, 1, 1}};
    MlpParams rp = mlp_init(rspec, rng);
    rp.weights[0].values = {1.0};
    rp.biases[0].values = {-5.0}; // pre-activation stays negative
    rp.weights[1].values = {3.0};
    MlpTape rt;
    mlp_forward(rspec, rp, {1.0}, out, &rt);
    std::vector<double> ig;
    mlp_backward(rspec, rp, rt, {1.0}, &ig);
    REQUIRE(rp.weights[0].grad[0] == 0.0);
    REQUIRE(ig[0] == 0.0);
}

TEST_CASE("mlp gradients match finite differences") {
    MlpSpec spec{{4, 6, 3, 2}};
    spec.residual_input_to_output = true;
    spec.residual_input_index = 2;
    SeededRng rng(6);
    MlpParams params = mlp_init(spec, rng);
    // nonzero output layer and biases so every gradient path is exercised and
    // no pre-activation sits on the ReLU kink
    for (auto& v : params.weights.back().values) v = 0.3 * (2.0 * rng.uniform() - 1.0);
    for (auto& b : params.biases)
        for (auto& v : b.values) v = 0.5 * (2.0 * rng.uniform() - 1.0);
    const std::vector<double> x = {0.7, -1.1, 0.4, 0.9};
    const std::vector<double> target = {0.25, -0.5};

    auto loss = [&]() {
        std::vector<double> out;
        mlp_forward(spec, params, x, out);
        double l = 0;
        for (std::size_t i = 0; i < out.size(); ++i)
            l += (out[i] - target[i]) * (out[i] - target[i]);
        return l;
    };
    params.zero_grad();
    std::vector<double> out;
    MlpTape tape;
    mlp_forward(spec, params, x, out, &tape);
    std::vector<double> og(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) og[i] = 2.0 * (out[i] - target[i]);
    mlp_backward(spec, params, tape, og);

    REQUIRE(finite_diff_check(loss, params.all(), 1e-5) < 1e-5);
}

TEST_CASE("mlp is invariant to a matched input/weight permutation") {
    MlpSpec spec{{4, 3, 2}};
    SeededRng rng(7);
    MlpParams params = mlp_init(spec, rng);
    for (auto& v : params.weights.back().values) v = rng.uniform() - 0.5;
    const std::vector<double> x = {0.3, -0.8, 1.2, 0.1};
    const std::vector<std::size_t> perm = {2, 0, 3, 1};

    MlpParams permuted = params;
    std::vector<double> px(4);
    for (std::size_t i = 0; i < 4; ++i) px[i] = x[perm[i]];
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 4; ++i)
            permuted.weights[0].values[o * 4 + i] = params.weights[0].values[o * 4 + perm[i]];

    std::vector<double> a, b;
    mlp_forward(spec, params, x, a);
    mlp_forward(spec, permuted, px, b);
    REQUIRE(a[0] == Approx(b[0]).margin(1e-12));
    REQUIRE(a[1] == Approx(b[1]).margin(1e-12));
}

TEST_CASE("straight-through estimator contract") {
    std::vector<cplx> soft = {{0.9, 0.1}, {-0.2, 1.1}};
    std::vector<cplx> hard = {{1, 0}, {0, 1}};
    auto fwd = straight_through(soft, hard);
    REQUIRE(fwd == hard);
    REQUIRE_THROWS_AS(straight_through(soft, std::vector<cplx>{{1, 0}}), std::invalid_argument);

    std::vector<cplx> grad_soft(2, cplx{0, 0});
    std::vector<cplx> upstream = {{0.5, -0.25}, {1.5, 2.0}};
    ste_backward(upstream, grad_soft);
    REQUIRE(grad_soft == upstream);
}

TEST_CASE("straight-through composed with a quadratic matches finite differences") {
    // Downstream loss sees the quantized value plus the frozen residual, which
    // is the function training actually optimizes while the decision is
    // locally constant.
    std::vector<cplx> soft = {{0.9, 0.05}, {-0.6, 0.7}};
    std::vector<cplx> hard = {{1, 0}, {-0.5, 0.5}};
    std::vector<cplx> residual(2);
    for (std::size_t i = 0; i < 2; ++i) residual[i] = hard[i] - soft[i];
    const std::vector<cplx> target = {{0.8, -0.1}, {0.1, 0.4}};

    auto loss_at = [&](const std::vector<cplx>& s) {
        double l = 0;
        for (std::size_t i = 0; i < 2; ++i) l += std::norm(s[i] + residual[i] - target[i]);
        return l;
    };
    // copied (straight-through) gradient = gradient at the quantized point
    std::vector<cplx> ste_grad(2);
    for (std::size_t i = 0; i < 2; ++i) ste_grad[i] = 2.0 * (hard[i] - target[i]);

    const double h = 1e-6;
    for (std::size_t i = 0; i < 2; ++i) {
        auto s = soft;
        s[i] += cplx{h, 0};
        double lp = loss_at(s);
        s[i] -= cplx{2 * h, 0};
        double lm = loss_at(s);
        REQUIRE((lp - lm) / (2 * h) == Approx(ste_grad[i].real()).margin(1e-6));
        s = soft;
        s[i] += cplx{0, h};
        lp = loss_at(s);
        s[i] -= cplx{0, 2 * h};
        lm = loss_at(s);
        REQUIRE((lp - lm) / (2 * h) == Approx(ste_grad[i].imag()).margin(1e-6));
    }
}

TEST_CASE("l2 penalty value and gradient") {
    ParamTensor p = ParamTensor::zeros("w", {1});
    p.values = {2.0};
    REQUIRE(l2_penalty({&p}, 0.0, false) == 0.0);
    REQUIRE(l2_penalty({&p}, 0.5, false) == Approx(2.0));

    p.zero_grad();
    auto loss = [&]() { return l2_penalty({&p}, 0.5, false); };
    l2_penalty({&p}, 0.5, true);
    REQUIRE(finite_diff_check(loss, {&p}, 1e-5) < 1e-8);
}

TEST_CASE("finite_diff_check on a quadratic") {
    ParamTensor p = ParamTensor::zeros("p", {3});
    p.values = {0.5, -1.5, 2.0};
    auto loss = [&]() {
        double l = 0;
        for (double v : p.values) l += v * v;
        return l;
    };
    for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2.0 * p.values[i];
    REQUIRE(finite_diff_check(loss, {&p}, 1e-5) < 1e-9);

    // an injected sign flip is caught
    p.grad[1] = -p.grad[1];
    REQUIRE(finite_diff_check(loss, {&p}, 1e-5) > 0.5);
}

TEST_CASE("checkpoint round trip and checksum") {
    ParamTensor a = ParamTensor::zeros("dec.taps", {31, 2});
    ParamTensor b = ParamTensor::zeros("enc.taps", {25, 2});
    SeededRng rng(8);
    for (auto& v : a.values) v = rng.gaussian();
    for (auto& v : b.values) v = rng.gaussian();

    std::stringstream ss;
    checkpoint_save({&a, &b}, ss);
    auto loaded = checkpoint_load(ss);
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded[0].name == "dec.taps");
    REQUIRE(loaded[0].shape == std::vector<std::size_t>{31, 2});
    REQUIRE(loaded[0].values == a.values);
    REQUIRE(loaded[1].values == b.values);

    REQUIRE(param_checksum({&a, &b}) == param_checksum({&a, &b}));
    const double keep = a.values[0];
    a.values[0] += 1e-9;
    REQUIRE(param_checksum({&a, &b}) != param_checksum({&b}));
    a.values[0] = keep;

    std::stringstream bad("BOGUS!!!");
    REQUIRE_THROWS_AS(checkpoint_load(bad), std::runtime_error);
}
