#ifndef BLINDEQ_GRADCHECK_HPP
#define BLINDEQ_GRADCHECK_HPP

#include <string>
#include <vector>

#include "blindeq/trainers.hpp"
#include "blindeq/vae_trainers.hpp"

namespace blindeq {

struct GradCheckResult {
    std::string path;
    double max_rel_err = 0;
};

namespace detail {

struct GradFixture {
    ComplexSignal y;
    SymbolFrame tx;
};

inline GradFixture gradcheck_fixture(int order, double snr_db, std::size_t n, std::uint64_t seed) {
    Constellation c = make_qam(order);
    SeededRng rng(seed);
    GradFixture d;
    d.tx = draw_symbols(c, n, rng);
    ComplexSignal shaped =
        fir_filter(upsample(d.tx, 2), rrc_taps(0.1, kPulseSpanSymbols, 2), ConvMode::Same);
    LinearIsiChannel ch{default_linear_channel_taps(), snr_to_noise_variance(c, snr_db)};
    d.y = linear_channel_apply(shaped, ch, rng);
    return d;
}

inline void gradcheck_perturb(ParamTensor& p, SeededRng& rng, double scale) {
    for (auto& v : p.values) v += scale * (2.0 * rng.uniform() - 1.0);
}

inline FeatureExtractorConfig gradcheck_features() {
    FeatureExtractorConfig cfg;
    cfg.sets.p_a = {1, 3};
    cfg.sets.l_a[1] = {-2, -1, 0, 1, 2};
    cfg.sets.l_a[3] = {-1, 0, 1};
    cfg.sets.p_b = {3};
    cfg.sets.l_b = {-1, 0, 1};
    cfg.sets.m_b = {1};
    return cfg;
}

} // namespace detail

/// FIR-equalizer gradient paths: VQ-VAE loss, constant-modulus batch loss,
/// MMSE pilot loss.
inline std::vector<GradCheckResult> gradcheck_fir(bool inject_fault = false) {
    std::vector<GradCheckResult> out;
    auto d = detail::gradcheck_fixture(16, 18.0, 64, 11);
    TrainBatch b{&d.y, 0, 64};
    SeededRng prng(12);
    {
        VqVaeFirConfig cfg;
        cfg.decoder_taps = 9;
        cfg.encoder_taps = 7;
        cfg.edge_trim = 4;
        VqVaeFirTrainer tr(make_qam(16), cfg);
        detail::gradcheck_perturb(tr.decoder(), prng, 0.05);
        detail::gradcheck_perturb(tr.encoder(), prng, 0.05);
        tr.forward_backward(b);
        if (inject_fault) tr.decoder().grad[0] = -tr.decoder().grad[0];
        const std::vector<cplx> xt0 = tr.last_x_tilde(), xh0 = tr.last_x_hat();
        auto loss = [&]() { return tr.surrogate_loss(b, xt0, xh0); };
        out.push_back({"vqvae-fir", finite_diff_check(loss, tr.parameters(), 1e-5)});
    }
    {
        CmaBatchTrainer tr(make_qam(16), 9, 1e-3);
        detail::gradcheck_perturb(tr.taps(), prng, 0.1);
        tr.forward_backward(b);
        auto loss = [&]() { return tr.loss_only(b); };
        out.push_back({"cma-batch", finite_diff_check(loss, {&tr.taps()}, 1e-5)});
    }
    {
        FfeMmseTrainer tr(9, 1e-3);
        detail::gradcheck_perturb(tr.taps(), prng, 0.1);
        std::vector<cplx> pilots(d.tx.symbols.begin(), d.tx.symbols.begin() + 64);
        tr.forward_backward(b, pilots);
        auto loss = [&]() { return tr.loss_only(b, pilots); };
        out.push_back({"ffe-mmse", finite_diff_check(loss, {&tr.taps()}, 1e-5)});
    }
    return out;
}

/// MLP paths: raw network and the NN VQ-VAE composite (features, encoder
/// window, straight-through, L2 penalty).
inline std::vector<GradCheckResult> gradcheck_mlp(bool inject_fault = false) {
    std::vector<GradCheckResult> out;
    {
        MlpSpec spec{{4, 6, 3, 2}};
        spec.residual_input_to_output = true;
        spec.residual_input_index = 2;
        SeededRng rng(6);
        MlpParams params = mlp_init(spec, rng);
        for (auto& v : params.weights.back().values) v = 0.3 * (2.0 * rng.uniform() - 1.0);
        for (auto& bt : params.biases)
            for (auto& v : bt.values) v = 0.5 * (2.0 * rng.uniform() - 1.0);
        const std::vector<double> x = {0.7, -1.1, 0.4, 0.9};
        const std::vector<double> target = {0.25, -0.5};
        auto loss = [&]() {
            std::vector<double> o;
            mlp_forward(spec, params, x, o);
            return (o[0] - target[0]) * (o[0] - target[0]) +
                   (o[1] - target[1]) * (o[1] - target[1]);
        };
        params.zero_grad();
        std::vector<double> o;
        MlpTape tape;
        mlp_forward(spec, params, x, o, &tape);
        mlp_backward(spec, params, tape, {2.0 * (o[0] - target[0]), 2.0 * (o[1] - target[1])});
        if (inject_fault) params.weights[0].grad[0] = -params.weights[0].grad[0] - 1.0;
        out.push_back({"mlp", finite_diff_check(loss, params.all(), 1e-5)});
    }
    {
        auto d = detail::gradcheck_fixture(4, 15.0, 48, 21);
        VqVaeNnConfig cfg;
        cfg.features = detail::gradcheck_features();
        cfg.decoder_hidden = {6};
        cfg.encoder_hidden = {8};
        cfg.encoder_window = 5;
        cfg.edge_trim = 4;
        cfg.l2_weight = 1e-3;
        SeededRng rng(22);
        VqVaeNnTrainer tr(make_qam(4), cfg, rng);
        for (auto* mp : {&tr.decoder_params(), &tr.encoder_params()}) {
            for (auto& bt : mp->biases)
                for (auto& v : bt.values) v = 0.2 * (2.0 * rng.uniform() - 1.0);
            for (auto& v : mp->weights.back().values) v = 0.3 * (2.0 * rng.uniform() - 1.0);
        }
        TrainBatch b{&d.y, 0, 48};
        tr.forward_backward(b);
        const Constellation c = make_qam(4);
        const std::vector<cplx> xt0 = tr.last_x_tilde();
        std::vector<cplx> xh0(b.n_symbols);
        for (std::size_t k = 0; k < b.n_symbols; ++k) xh0[k] = c.points[c.nearest_index(xt0[k])];
        auto loss = [&]() { return tr.surrogate_loss(b, xt0, xh0); };
        out.push_back({"vqvae-nn", finite_diff_check(loss, tr.parameters(), 1e-5)});
    }
    {
        auto d = detail::gradcheck_fixture(4, 15.0, 40, 31);
        VqVaeMpConfig cfg;
        cfg.decoder_features = detail::gradcheck_features();
        cfg.encoder_orders = {1, 3};
        cfg.encoder_half_lags = 2;
        cfg.edge_trim = 4;
        VqVaeMpTrainer tr(make_qam(4), cfg);
        SeededRng prng(32);
        detail::gradcheck_perturb(*tr.parameters()[0], prng, 0.05);
        detail::gradcheck_perturb(*tr.parameters()[1], prng, 0.05);
        TrainBatch b{&d.y, 0, 40};
        tr.forward_backward(b);
        const Constellation c = make_qam(4);
        const std::vector<cplx> xt0 = tr.last_x_tilde();
        std::vector<cplx> xh0(b.n_symbols);
        for (std::size_t k = 0; k < b.n_symbols; ++k) xh0[k] = c.points[c.nearest_index(xt0[k])];
        auto loss = [&]() { return tr.surrogate_loss(b, xt0, xh0); };
        out.push_back({"vqvae-mp", finite_diff_check(loss, tr.parameters(), 1e-5)});
    }
    return out;
}

/// Closed-form ELBO trainers (linear and memory-polynomial encoders).
inline std::vector<GradCheckResult> gradcheck_elbo(bool inject_fault = false) {
    std::vector<GradCheckResult> out;
    {
        auto d = detail::gradcheck_fixture(4, 14.0, 32, 41);
        VaeFirConfig cfg;
        cfg.decoder_taps = 7;
        cfg.encoder_taps = 5;
        cfg.edge_trim = 4;
        cfg.init_sigma_d2 = 0.25;
        cfg.init_sigma_w2 = 0.15;
        VaeFirTrainer tr(make_qam(4), cfg);
        SeededRng prng(42);
        detail::gradcheck_perturb(*tr.parameters()[0], prng, 0.05);
        detail::gradcheck_perturb(*tr.parameters()[1], prng, 0.05);
        TrainBatch b{&d.y, 0, 32};
        tr.forward_backward(b);
        if (inject_fault) tr.parameters()[2]->grad[0] += 1.0;
        auto loss = [&]() { return tr.loss_only(b); };
        out.push_back({"vae-linear", finite_diff_check(loss, tr.parameters(), 1e-5)});
    }
    {
        auto d = detail::gradcheck_fixture(4, 14.0, 32, 51);
        VaeMpConfig cfg;
        cfg.decoder_features = detail::gradcheck_features();
        cfg.encoder_orders = {1, 3};
        cfg.encoder_half_lags = 2;
        cfg.edge_trim = 4;
        cfg.init_sigma_d2 = 0.25;
        cfg.init_sigma_w2 = 0.15;
        VaeMpTrainer tr(make_qam(4), cfg);
        SeededRng prng(52);
        detail::gradcheck_perturb(*tr.parameters()[0], prng, 0.05);
        detail::gradcheck_perturb(*tr.parameters()[1], prng, 0.05);
        TrainBatch b{&d.y, 0, 32};
        tr.forward_backward(b);
        auto loss = [&]() { return tr.loss_only(b); };
        out.push_back({"vae-mp", finite_diff_check(loss, tr.parameters(), 1e-5)});
    }
    return out;
}

/// Runs the selected finite-difference suites; "all" covers every path.
inline std::vector<GradCheckResult> gradcheck_run(const std::string& module,
                                                  bool inject_fault = false) {
    std::vector<GradCheckResult> out;
    if (module == "all" || module == "fir") {
        auto r = gradcheck_fir(inject_fault);
        out.insert(out.end(), r.begin(), r.end());
    }
    if (module == "all" || module == "mlp") {
        auto r = gradcheck_mlp(inject_fault);
        out.insert(out.end(), r.begin(), r.end());
    }
    if (module == "all" || module == "elbo") {
        auto r = gradcheck_elbo(inject_fault);
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

} // namespace blindeq

#endif
