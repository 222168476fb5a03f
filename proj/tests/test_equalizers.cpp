#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "blindeq/equalizers.hpp"

using namespace blindeq;
using Catch::Approx;

namespace {

struct LinearChannelData {
    ComplexSignal y; // 2 SPS
    SymbolFrame tx;
};

LinearChannelData make_linear_data(int order, double snr_db, std::size_t n_sym,
                                   std::uint64_t seed, bool noise = true) {
    Constellation c = make_qam(order);
    SeededRng rng(seed);
    LinearChannelData d;
    d.tx = draw_symbols(c, n_sym, rng);
    ComplexSignal shaped = fir_filter(upsample(d.tx, 2), rrc_taps(0.1, 32, 2), ConvMode::Same);
    LinearIsiChannel ch{default_linear_channel_taps(),
                        noise ? snr_to_noise_variance(c, snr_db) : 0.0};
    d.y = linear_channel_apply(shaped, ch, rng);
    return d;
}

/// Data-aided least-squares tap fit; the closed-form reference the adaptive
/// trainers are compared against.
FirEqualizer mmse_fit_taps(const ComplexSignal& y, const SymbolFrame& tx, int n_taps,
                           std::size_t guard) {
    const std::ptrdiff_t c = (n_taps - 1) / 2;
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(y.samples.size());
    std::vector<Eigen::Index> rows;
    for (std::size_t k = guard; k + guard < tx.symbols.size(); ++k)
        rows.push_back(static_cast<Eigen::Index>(k));
    Eigen::MatrixXcd A(rows.size(), n_taps);
    Eigen::VectorXcd b(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::ptrdiff_t base = 2 * rows[r] + c;
        for (int i = 0; i < n_taps; ++i) {
            const std::ptrdiff_t j = base - i;
            A(static_cast<Eigen::Index>(r), i) =
                (j >= 0 && j < n) ? y.samples[static_cast<std::size_t>(j)] : cplx{0, 0};
        }
        b(static_cast<Eigen::Index>(r)) = tx.symbols[static_cast<std::size_t>(rows[r])];
    }
    Eigen::VectorXcd w = (A.adjoint() * A).ldlt().solve(A.adjoint() * b);
    FirEqualizer eq;
    eq.taps.assign(w.data(), w.data() + n_taps);
    return eq;
}

} // namespace

TEST_CASE("equalize_fir with Dirac taps picks the even samples") {
    ComplexSignal y;
    y.sps = 2;
    for (int i = 0; i < 12; ++i) y.samples.push_back({static_cast<double>(i), -static_cast<double>(i)});
    auto xt = equalize_fir(y, FirEqualizer::dirac(5));
    REQUIRE(xt.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) REQUIRE(xt[k] == y.samples[2 * k]);
    REQUIRE_THROWS_AS(FirEqualizer::dirac(4), std::invalid_argument);
}

TEST_CASE("matched-filter + Dirac equalizer recovers clean symbols") {
    Constellation c = make_qam(16);
    SeededRng rng(1);
    SymbolFrame tx = draw_symbols(c, 512, rng);
    auto rrc = rrc_taps(0.1, 40, 2);
    ComplexSignal shaped = fir_filter(upsample(tx, 2), rrc, ConvMode::Same);
    ComplexSignal matched = fir_filter(shaped, rrc, ConvMode::Same);
    auto xt = equalize_fir(matched, FirEqualizer::dirac(31));
    std::vector<cplx> got(xt.begin() + 40, xt.end() - 40);
    std::vector<cplx> want(tx.symbols.begin() + 40, tx.symbols.end() - 40);
    // aggregate truncation ISI of the span-40 pulse at 10% rolloff
    REQUIRE(evm(got, want) < 2.5e-3);
}

TEST_CASE("MMSE-fitted taps drive residual ISI below -20 dB at 21 dB SNR") {
    auto d = make_linear_data(16, 21.0, 8192, 2);
    FirEqualizer eq = mmse_fit_taps(d.y, d.tx, 31, 64);

    // apply the fitted taps to the noise-free channel output: pure ISI residue
    auto clean = make_linear_data(16, 21.0, 8192, 2, false);
    auto xt = equalize_fir(clean.y, eq);
    double err = 0, ref = 0;
    for (std::size_t k = 64; k + 64 < xt.size(); ++k) {
        err += std::norm(xt[k] - clean.tx.symbols[k]);
        ref += std::norm(clean.tx.symbols[k]);
    }
    REQUIRE(10.0 * std::log10(err / ref) < -20.0);
}

TEST_CASE("demap_hard basics") {
    Constellation c = make_qam(4);
    const cplx p = c.points[c.nearest_index({0.9, 0.1})];
    REQUIRE(std::abs(p - cplx{1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)}) < 1e-15);
    for (auto pt : c.points) {
        auto f = demap_hard({pt}, c);
        REQUIRE(f.symbols[0] == pt);
    }
}

TEST_CASE("joint block argmin equals per-symbol demapping (brute force)") {
    Constellation c = make_qam(4);
    SeededRng rng(3);
    for (int n : {1, 2, 3, 4}) {
        for (int trial = 0; trial < 64; ++trial) {
            std::vector<cplx> xt(static_cast<std::size_t>(n));
            for (auto& v : xt) v = cplx{3.0 * (rng.uniform() - 0.5), 3.0 * (rng.uniform() - 0.5)};
            // exhaustive joint argmin over X^N
            std::size_t total = 1;
            for (int i = 0; i < n; ++i) total *= 4;
            double best = 1e300;
            std::vector<std::size_t> best_idx;
            for (std::size_t code = 0; code < total; ++code) {
                std::size_t rem = code;
                double dist = 0;
                std::vector<std::size_t> idx(static_cast<std::size_t>(n));
                for (int i = 0; i < n; ++i) {
                    idx[static_cast<std::size_t>(i)] = rem % 4;
                    rem /= 4;
                    dist += std::norm(xt[static_cast<std::size_t>(i)] -
                                      c.points[idx[static_cast<std::size_t>(i)]]);
                }
                if (dist < best) {
                    best = dist;
                    best_idx = idx;
                }
            }
            auto per_symbol = demap_indices(xt, c);
            REQUIRE(per_symbol == best_idx);
        }
    }
}

TEST_CASE("align_and_ser: identity, rotation, delay, counting") {
    Constellation c = make_qam(16);
    SeededRng rng(4);
    SymbolFrame truth = draw_symbols(c, 10000, rng);

    SECTION("identical frames") {
        auto r = align_and_ser(truth, truth, SerSearch::None);
        REQUIRE(r.ser == 0.0);
    }
    SECTION("quarter-turn rotation is found") {
        SymbolFrame rot = truth;
        for (auto& s : rot.symbols) s *= cplx{0, 1};
        REQUIRE(align_and_ser(rot, truth, SerSearch::None).ser > 0.5);
        auto r = align_and_ser(rot, truth, SerSearch::Phase4);
        REQUIRE(r.ser == 0.0);
        REQUIRE(r.rotation == cplx{0, -1}); // inverse rotation applied to decisions
    }
    SECTION("single error in 1e4 symbols") {
        SymbolFrame one = truth;
        std::size_t k = 137;
        one.symbols[k] = c.points[(c.nearest_index(one.symbols[k]) + 1) % 16];
        auto r = align_and_ser(one, truth, SerSearch::None);
        REQUIRE(r.ser == Approx(1e-4));
        REQUIRE(r.errors == 1);
    }
    SECTION("delay is searched when requested") {
        SymbolFrame shifted = truth;
        shifted.symbols.erase(shifted.symbols.begin(), shifted.symbols.begin() + 3);
        shifted.symbols.resize(truth.symbols.size(), c.points[0]);
        auto r = align_and_ser(shifted, truth, SerSearch::Phase4Delay, 8);
        REQUIRE(r.ser < 1e-3);
        REQUIRE(r.delay == -3);
    }
    SECTION("empty frames throw") {
        SymbolFrame e;
        e.constellation = c;
        REQUIRE_THROWS_AS(align_and_ser(e, e, SerSearch::None), std::invalid_argument);
    }
}

TEST_CASE("feature lengths match the configured index sets") {
    REQUIRE(fiber_feature_config().feature_length() == 127);
    REQUIRE(pa_feature_config().feature_length() == 115);
    REQUIRE(fiber_feature_config().center_feature_index() == 21);
    REQUIRE(pa_feature_config().center_feature_index() == 15);
}

TEST_CASE("feature count formula holds for randomized index sets") {
    SeededRng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        FeatureExtractorConfig cfg;
        const int n_orders = 1 + static_cast<int>(rng.uniform_int(3));
        std::size_t expect = 0;
        for (int i = 0; i < n_orders; ++i) {
            const int p = 2 * i + 1;
            cfg.sets.p_a.push_back(p);
            const int half = static_cast<int>(rng.uniform_int(6));
            for (int l = -half; l <= half; ++l) cfg.sets.l_a[p].push_back(l);
            expect += cfg.sets.l_a[p].size();
        }
        if (rng.uniform() < 0.7) {
            cfg.sets.p_b = {3};
            const int half = static_cast<int>(rng.uniform_int(4));
            for (int l = -half; l <= half; ++l) cfg.sets.l_b.push_back(l);
            for (int m = 1; m <= 1 + static_cast<int>(rng.uniform_int(3)); ++m)
                cfg.sets.m_b.push_back(m);
            expect += cfg.sets.l_b.size() * cfg.sets.m_b.size();
        }
        ComplexSignal y;
        y.sps = 2;
        for (int i = 0; i < 64; ++i) y.samples.push_back(rng.gaussian_pair());
        auto s = extract_gmp_features(y, cfg, 16);
        REQUIRE(s.size() == expect);
        REQUIRE(s.size() == cfg.feature_length());
    }
}

TEST_CASE("feature values: raw first-order terms and constant input") {
    FeatureExtractorConfig cfg = fiber_feature_config();
    SeededRng rng(6);
    ComplexSignal y;
    y.sps = 2;
    for (int i = 0; i < 256; ++i) y.samples.push_back(rng.gaussian_pair());

    const std::ptrdiff_t k = 40;
    auto s = extract_gmp_features(y, cfg, k);
    // a-block for p=1 comes first, lags -21..21: s[j] = y[2k + 21 - ... l]
    const auto& lags = cfg.sets.l_a.at(1);
    for (std::size_t j = 0; j < lags.size(); ++j) {
        const std::ptrdiff_t idx = 2 * k - lags[j];
        REQUIRE(s[j] == y.samples[static_cast<std::size_t>(idx)]);
    }

    ComplexSignal ones;
    ones.sps = 2;
    ones.samples.assign(256, cplx{1, 0});
    auto sc = extract_gmp_features(ones, cfg, 64);
    for (auto v : sc) REQUIRE(std::abs(v - cplx{1, 0}) < 1e-12);
}

TEST_CASE("zero-weight NN equalizer with residual is a passthrough") {
    FeatureExtractorConfig cfg = fiber_feature_config();
    MlpSpec spec{{static_cast<int>(2 * cfg.feature_length()), 32, 8, 2}};
    spec.residual_input_to_output = true;
    spec.residual_input_index = static_cast<int>(2 * cfg.center_feature_index());
    SeededRng rng(7);
    MlpParams params = mlp_init(spec, rng);
    // output layer is zero-initialized already; the residual is the whole map
    ComplexSignal y;
    y.sps = 2;
    for (int i = 0; i < 128; ++i) y.samples.push_back(rng.gaussian_pair());
    auto xt = equalize_nn(y, cfg, spec, params);
    REQUIRE(xt.size() == 64);
    for (std::size_t k = 0; k < xt.size(); ++k)
        REQUIRE(std::abs(xt[k] - y.samples[2 * k]) < 1e-12);

    MlpSpec bad = spec;
    bad.layer_widths[0] = 10;
    REQUIRE_THROWS_AS(equalize_nn(y, cfg, bad, params), std::invalid_argument);
}
