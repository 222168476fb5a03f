#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "blindeq/channels.hpp"

using namespace blindeq;
using Catch::Approx;

namespace {

ComplexSignal random_waveform(std::size_t n, double power, int sps, std::uint64_t seed) {
    SeededRng rng(seed);
    ComplexSignal s;
    s.sps = sps;
    s.samples.reserve(n);
    const double a = std::sqrt(power);
    for (std::size_t i = 0; i < n; ++i) s.samples.push_back(a * rng.gaussian_pair());
    return s;
}

/// Matched filter + symbol-rate sampling of a 2-SPS fiber/PA observation.
std::vector<cplx> symbols_from_2sps(const ComplexSignal& rx, double rolloff) {
    ComplexSignal mf = fir_filter(rx, rrc_taps(rolloff, kPulseSpanSymbols, 2), ConvMode::Same);
    return decimate(mf, 2, 0).samples;
}

} // namespace

TEST_CASE("linear channel impulse response echoes the taps") {
    LinearIsiChannel ch{default_linear_channel_taps(), 0.0};
    ComplexSignal tx;
    tx.sps = 2;
    tx.samples.assign(16, cplx{0, 0});
    tx.samples[5] = cplx{1, 0};
    SeededRng rng(1);
    ComplexSignal y = linear_channel_apply(tx, ch, rng);
    for (std::size_t i = 0; i < 5; ++i)
        REQUIRE(std::abs(y.samples[3 + i] - ch.taps_h[i]) < 1e-15);
    REQUIRE(std::abs(y.samples[2]) < 1e-15);
    REQUIRE(std::abs(y.samples[8]) < 1e-15);
}

TEST_CASE("linear channel with unit tap and no noise is the identity") {
    LinearIsiChannel ch{{cplx{1, 0}}, 0.0};
    ComplexSignal tx = random_waveform(64, 1.0, 2, 4);
    SeededRng rng(2);
    REQUIRE(linear_channel_apply(tx, ch, rng).samples == tx.samples);
}

TEST_CASE("linear channel noise power calibration") {
    LinearIsiChannel ch{{cplx{1, 0}}, 0.01};
    ComplexSignal tx;
    tx.sps = 2;
    tx.samples.assign(1'000'000, cplx{0, 0});
    SeededRng rng(3);
    ComplexSignal y = linear_channel_apply(tx, ch, rng);
    REQUIRE(mean_power(y) == Approx(0.01).epsilon(0.01));
}

TEST_CASE("SSFM conserves power without attenuation") {
    FiberLink f = make_ssmf_link();
    f.alpha_db_per_km = 0.0;
    f.ssfm_steps = 100;
    ComplexSignal in = random_waveform(4096, 6.3e-3, 8, 10);
    const double pin = mean_power(in);

    SECTION("gamma = 0 (pure dispersion)") {
        FiberLink lin = f;
        lin.gamma_per_w_km = 0.0;
        ComplexSignal out = ssfm_propagate(in, lin);
        REQUIRE(std::abs(mean_power(out) - pin) / pin < 1e-12);
    }
    SECTION("full nonlinearity") {
        ComplexSignal out = ssfm_propagate(in, f);
        REQUIRE(std::abs(mean_power(out) - pin) / pin < 1e-9);
    }
}

TEST_CASE("SSFM backward run inverts the forward run") {
    FiberLink f = make_ssmf_link();
    f.ssfm_steps = 50;
    ComplexSignal in = random_waveform(2048, 6.3e-3, 8, 11);
    ComplexSignal fwd = ssfm_propagate(in, f, Direction::Forward);
    ComplexSignal back = ssfm_propagate(fwd, f, Direction::Backward);
    double worst = 0;
    for (std::size_t i = 0; i < in.samples.size(); ++i)
        worst = std::max(worst, std::abs(back.samples[i] - in.samples[i]));
    REQUIRE(worst < 1e-9);
}

TEST_CASE("SSFM attenuation follows the loss coefficient") {
    FiberLink f = make_ssmf_link();
    f.gamma_per_w_km = 0.0;
    f.ssfm_steps = 10;
    ComplexSignal in = random_waveform(1024, 6.3e-3, 8, 12);
    ComplexSignal out = ssfm_propagate(in, f);
    const double expect = std::pow(10.0, -f.alpha_db_per_km * f.length_km / 10.0);
    REQUIRE(std::abs(mean_power(out) / mean_power(in) - expect) / expect < 1e-9);
}

TEST_CASE("SSFM rejects non-finite input") {
    FiberLink f = make_ssmf_link();
    f.ssfm_steps = 2;
    ComplexSignal in = random_waveform(64, 1e-3, 8, 13);
    in.samples[10] = cplx{std::numeric_limits<double>::quiet_NaN(), 0};
    REQUIRE_THROWS_AS(ssfm_propagate(in, f), std::runtime_error);
}

TEST_CASE("cd_compensate inverts linear-only propagation and is all-pass") {
    FiberLink f = make_ssmf_link();
    f.alpha_db_per_km = 0.0;
    f.gamma_per_w_km = 0.0;
    f.ssfm_steps = 20;
    ComplexSignal in = random_waveform(2048, 6.3e-3, 8, 14);
    ComplexSignal disp = ssfm_propagate(in, f);
    const double rate_ghz = f.symbol_rate_gbaud * f.sim_sps;

    ComplexSignal same = cd_compensate(in, f.beta2_ps2_per_km, 0.0, rate_ghz);
    double w0 = 0;
    for (std::size_t i = 0; i < in.samples.size(); ++i)
        w0 = std::max(w0, std::abs(same.samples[i] - in.samples[i]));
    REQUIRE(w0 < 1e-12);

    ComplexSignal rec = cd_compensate(disp, f.beta2_ps2_per_km, f.length_km, rate_ghz);
    double worst = 0;
    for (std::size_t i = 0; i < in.samples.size(); ++i)
        worst = std::max(worst, std::abs(rec.samples[i] - in.samples[i]));
    REQUIRE(worst < 1e-9);
    REQUIRE(std::abs(mean_power(rec) - mean_power(disp)) / mean_power(disp) < 1e-12);
}

TEST_CASE("fiber table presets") {
    FiberLink ssmf = make_ssmf_link();
    REQUIRE(ssmf.alpha_db_per_km == 0.2);
    REQUIRE(ssmf.beta2_ps2_per_km == -21.683);
    REQUIRE(ssmf.gamma_per_w_km == 1.3);
    FiberLink nz = make_nzdsf_link();
    REQUIRE(nz.alpha_db_per_km == 0.21);
    REQUIRE(nz.beta2_ps2_per_km == -4.0);
    REQUIRE(nz.gamma_per_w_km == 1.6);
}

TEST_CASE("fully linear fully compensated link recovers the constellation") {
    FiberLink f = make_ssmf_link();
    f.gamma_per_w_km = 0.0;
    f.rx_noise_dbm = -1000.0; // noise off
    f.cd_precomp_fraction = 1.0;
    f.ssfm_steps = 20;
    SeededRng rng(21);
    Constellation qam = make_qam(16);
    SymbolFrame tx = draw_symbols(qam, 4096, rng);
    SeededRng crng(22);
    ComplexSignal rx = fiber_link_apply(tx, f, 0.1, crng);
    auto sym = symbols_from_2sps(rx, 0.1);
    const std::size_t guard = 256;
    std::vector<cplx> got(sym.begin() + guard, sym.end() - guard);
    std::vector<cplx> want(tx.symbols.begin() + guard, tx.symbols.end() - guard);
    REQUIRE(evm(got, want) < 0.01);
}

TEST_CASE("DBP with wide-open receiver inverts a noise-free nonlinear link") {
    FiberLink f = make_ssmf_link();
    f.rx_noise_dbm = -1000.0;
    f.lpf_bandwidth_ghz = 49.0;
    f.ssfm_steps = 40;
    f.launch_power_dbm = 8.0;
    SeededRng rng(31);
    Constellation qam = make_qam(16);
    SymbolFrame tx = draw_symbols(qam, 10000 + 512, rng);
    SeededRng crng(32);
    ComplexSignal rx = fiber_link_apply(tx, f, 0.1, crng);
    ComplexSignal eq = dbp(rx, f, 40, 0.1);
    const std::size_t guard = 256;
    std::vector<cplx> got(eq.samples.begin() + guard, eq.samples.end() - guard);
    std::vector<cplx> want(tx.symbols.begin() + guard, tx.symbols.end() - guard);
    // scale is normalized inside dbp; only compare decisions
    std::size_t errors = 0;
    for (std::size_t k = 0; k < got.size(); ++k)
        if (qam.nearest_index(got[k]) != qam.nearest_index(want[k])) ++errors;
    REQUIRE(errors == 0);
}

TEST_CASE("DBP on a linear link equals static CD compensation") {
    FiberLink f = make_ssmf_link();
    f.gamma_per_w_km = 0.0;
    f.rx_noise_dbm = -1000.0;
    f.ssfm_steps = 10;
    SeededRng rng(41);
    SymbolFrame tx = draw_symbols(make_qam(16), 2048, rng);
    SeededRng crng(42);
    ComplexSignal rx = fiber_link_apply(tx, f, 0.1, crng);

    ComplexSignal via_dbp = dbp(rx, f, 3, 0.1);

    ComplexSignal manual = cd_compensate(rx, f.beta2_ps2_per_km,
                                         (1.0 - f.cd_precomp_fraction) * f.length_km,
                                         f.rx_sample_rate_ghz);
    manual = fir_filter(manual, rrc_taps(0.1, kPulseSpanSymbols, 2), ConvMode::Same);
    ComplexSignal manual_sym = decimate(manual, 2, 0);
    const double g = 1.0 / std::sqrt(mean_power(manual_sym));
    for (auto& v : manual_sym.samples) v *= g;

    // the FFT ops are periodic while the matched filter zero-pads, so compare
    // away from the block edges
    const std::size_t trim = 320;
    std::vector<cplx> a(via_dbp.samples.begin() + trim, via_dbp.samples.end() - trim);
    std::vector<cplx> b(manual_sym.samples.begin() + trim, manual_sym.samples.end() - trim);
    REQUIRE(evm(a, b) < 1e-6);
}

TEST_CASE("GMP basics: gain, delay, hand-computed cubic") {
    GmpIndexSets sets;
    sets.p_a = {1, 3};
    sets.l_a[1] = {0, 1};
    sets.l_a[3] = {0};
    GmpModel m = GmpModel::zero(sets);

    ComplexSignal x;
    x.samples = {cplx{0, 0}, cplx{1, 0}, cplx{0, 0}};

    SECTION("pure gain") {
        m.a_at(1, 0) = cplx{0.5, -0.25};
        ComplexSignal y = gmp_apply(x, m);
        REQUIRE(y.samples[1] == cplx{0.5, -0.25});
        REQUIRE(y.samples[0] == cplx{0, 0});
        REQUIRE(y.samples[2] == cplx{0, 0});
    }
    SECTION("one-sample delay") {
        m.a_at(1, 1) = cplx{1, 0};
        ComplexSignal y = gmp_apply(x, m);
        REQUIRE(y.samples[2] == cplx{1, 0});
        REQUIRE(y.samples[1] == cplx{0, 0});
    }
    SECTION("linear plus cubic on an isolated unit sample") {
        m.a_at(1, 0) = cplx{1, 0};
        m.a_at(3, 0) = cplx{0.1, 0};
        ComplexSignal y = gmp_apply(x, m);
        REQUIRE(std::abs(y.samples[1] - cplx{1.1, 0}) < 1e-15);
    }
}

TEST_CASE("GMP with first-order a-terms equals FIR filtering") {
    GmpIndexSets sets;
    sets.p_a = {1};
    sets.l_a[1] = {-2, -1, 0, 1, 2};
    GmpModel m = GmpModel::zero(sets);
    SeededRng rng(51);
    std::vector<cplx> taps(5);
    for (std::size_t i = 0; i < 5; ++i) {
        taps[i] = rng.gaussian_pair();
        // lag l corresponds to x_{k-l}: tap index i maps to l = i - 2
        m.a_at(1, static_cast<int>(i) - 2) = taps[i];
    }
    ComplexSignal x = random_waveform(128, 1.0, 1, 52);
    ComplexSignal via_gmp = gmp_apply(x, m);
    // fir same with center c = 2: out[n] = sum_i taps'[i] x[n+2-i] -> taps'[i] = a(1, i-2)
    ComplexSignal via_fir = fir_filter(x, taps, ConvMode::Same);
    // fir index i uses x[n + 2 - i]; gmp lag l uses x[n - l]; l = i - 2 matches
    double worst = 0;
    for (std::size_t i = 0; i < x.samples.size(); ++i)
        worst = std::max(worst, std::abs(via_gmp.samples[i] - via_fir.samples[i]));
    REQUIRE(worst < 1e-12);
}

TEST_CASE("gmp_fit recovers a known model and rejects bad input") {
    GmpIndexSets sets;
    sets.p_a = {1, 3};
    sets.l_a[1] = {0, 1};
    sets.l_a[3] = {0, 1};
    sets.p_b = {3};
    sets.l_b = {0};
    sets.m_b = {1};
    GmpModel truth = GmpModel::zero(sets);
    SeededRng rng(61);
    for (auto& v : truth.a) v = rng.gaussian_pair();
    for (auto& v : truth.b) v = 0.1 * rng.gaussian_pair();

    ComplexSignal x = random_waveform(4096, 1.0, 1, 62);
    ComplexSignal y = gmp_apply(x, truth);
    GmpModel fit = gmp_fit(x, y, sets);
    for (std::size_t i = 0; i < truth.a.size(); ++i)
        REQUIRE(std::abs(fit.a[i] - truth.a[i]) / std::abs(truth.a[i]) < 1e-8);
    for (std::size_t i = 0; i < truth.b.size(); ++i)
        REQUIRE(std::abs(fit.b[i] - truth.b[i]) / std::abs(truth.b[i]) < 1e-8);

    // purely linear data: all p>1 coefficients vanish
    GmpModel lin = GmpModel::zero(sets);
    lin.a_at(1, 0) = cplx{1.0, 0.5};
    lin.a_at(1, 1) = cplx{-0.2, 0.1};
    ComplexSignal ylin = gmp_apply(x, lin);
    GmpModel fit2 = gmp_fit(x, ylin, sets);
    REQUIRE(std::abs(fit2.a[2]) < 1e-10);
    REQUIRE(std::abs(fit2.a[3]) < 1e-10);
    REQUIRE(std::abs(fit2.b[0]) < 1e-10);

    ComplexSignal tiny = random_waveform(4, 1.0, 1, 63);
    ComplexSignal tiny_y = gmp_apply(tiny, truth);
    REQUIRE_THROWS_AS(gmp_fit(tiny, tiny_y, sets), std::invalid_argument);
}

TEST_CASE("GMP text table round trip") {
    GmpModel m = make_surrogate_pa();
    std::stringstream ss;
    gmp_save(m, ss);
    GmpModel back = gmp_load(ss);
    REQUIRE(back.a.size() == m.a.size());
    REQUIRE(back.b.size() == m.b.size());
    REQUIRE(back.c.size() == m.c.size());
    for (std::size_t i = 0; i < m.a.size(); ++i) REQUIRE(std::abs(back.a[i] - m.a[i]) < 1e-12);
    for (std::size_t i = 0; i < m.b.size(); ++i) REQUIRE(std::abs(back.b[i] - m.b[i]) < 1e-12);
}

TEST_CASE("PA channel: configuration echo and linear-PA sanity") {
    GmpIndexSets sets;
    sets.p_a = {1};
    sets.l_a[1] = {0};
    GmpModel lin = GmpModel::zero(sets);
    lin.a_at(1, 0) = cplx{1, 0};

    PaChannel ch;
    ch.pa = lin;
    ch.noise_std_volts = 0.0;
    ch.avg_output_power_dbm = 30.0;
    REQUIRE(PaChannel{}.noise_std_volts == 0.4);

    SeededRng rng(71);
    SymbolFrame tx = draw_symbols(make_qam(64), 4096, rng);
    SeededRng crng(72);
    ComplexSignal rx = pa_channel_apply(tx, ch, 0.2, crng);
    // configured output power is hit
    REQUIRE(mean_power(rx) == Approx(dbm_to_watts(30.0) * ch.load_ohms).epsilon(0.02));

    auto sym = symbols_from_2sps(rx, 0.2);
    const std::size_t guard = 64;
    std::vector<cplx> got(sym.begin() + guard, sym.end() - guard);
    std::vector<cplx> want(tx.symbols.begin() + guard, tx.symbols.end() - guard);
    // truncation of the span-32 RRC bounds the residual ISI
    REQUIRE(evm(got, want) < 1e-3);
}

TEST_CASE("surrogate PA is deterministic, drive-monotone, and compressive") {
    GmpModel m1 = make_surrogate_pa();
    GmpModel m2 = make_surrogate_pa();
    REQUIRE(m1.a == m2.a);
    REQUIRE(m1.b == m2.b);
    REQUIRE(m1.c == m2.c);

    SeededRng rng(81);
    SymbolFrame tx = draw_symbols(make_qam(64), 2048, rng);
    PaChannel ch;
    ch.pa = m1;
    ch.noise_std_volts = 0.0;
    double prev = 0;
    for (double dbm : {29.0, 31.0, 33.0, 35.0, 36.0}) {
        ch.avg_output_power_dbm = dbm;
        SeededRng crng(82);
        ComplexSignal rx = pa_channel_apply(tx, ch, 0.2, crng);
        const double p = mean_power(rx);
        REQUIRE(p == Approx(dbm_to_watts(dbm) * ch.load_ohms).epsilon(0.05));
        REQUIRE(p > prev);
        prev = p;
    }
}
