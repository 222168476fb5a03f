#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <map>

#include "blindeq/dsp.hpp"

using namespace blindeq;
using Catch::Approx;

TEST_CASE("QAM4 points are the four quadrant corners") {
    Constellation c = make_qam(4);
    REQUIRE(c.order() == 4);
    const double v = 1.0 / std::sqrt(2.0);
    for (auto p : c.points) {
        REQUIRE(std::abs(std::abs(p.real()) - v) < 1e-12);
        REQUIRE(std::abs(std::abs(p.imag()) - v) < 1e-12);
    }
}

TEST_CASE("QAM constellations are normalized and distinct") {
    for (int order : {4, 16, 64, 256}) {
        Constellation c = make_qam(order);
        REQUIRE(c.mean_abs2() == Approx(1.0).margin(1e-12));
        for (std::size_t i = 0; i < c.points.size(); ++i)
            for (std::size_t j = i + 1; j < c.points.size(); ++j)
                REQUIRE(std::norm(c.points[i] - c.points[j]) > 1e-6);
    }
    REQUIRE_THROWS_AS(make_qam(8), std::invalid_argument);
    REQUIRE_THROWS_AS(make_qam(32), std::invalid_argument);
}

TEST_CASE("QAM16 axis levels and fourth moment") {
    Constellation c = make_qam(16);
    const double s = 1.0 / std::sqrt(10.0);
    for (auto p : c.points) {
        const double re = std::abs(p.real()) / s;
        REQUIRE((std::abs(re - 1.0) < 1e-12 || std::abs(re - 3.0) < 1e-12));
    }
    REQUIRE(c.mean_abs4() == Approx(1.32).margin(1e-12));
    REQUIRE(c.cma_r2() == Approx(1.32).margin(1e-12));
    REQUIRE(make_qam(4).cma_r2() == Approx(1.0).margin(1e-12));
}

TEST_CASE("QAM Gray indexing: nearest neighbors differ in one bit") {
    for (int order : {4, 16, 64}) {
        Constellation c = make_qam(order);
        // find the minimum inter-point spacing, then check all pairs at it
        double dmin = 1e300;
        for (std::size_t i = 0; i < c.points.size(); ++i)
            for (std::size_t j = i + 1; j < c.points.size(); ++j)
                dmin = std::min(dmin, std::abs(c.points[i] - c.points[j]));
        for (std::size_t i = 0; i < c.points.size(); ++i)
            for (std::size_t j = i + 1; j < c.points.size(); ++j)
                if (std::abs(c.points[i] - c.points[j]) < dmin * 1.001)
                    REQUIRE(std::popcount(i ^ j) == 1);
    }
}

TEST_CASE("draw_symbols is uniform, reproducible, and validates input") {
    Constellation c = make_qam(4);
    SeededRng rng(42);
    const std::size_t n = 1'000'000;
    SymbolFrame f = draw_symbols(c, n, rng);
    std::map<int, int> counts;
    for (auto s : f.symbols) {
        bool found = false;
        for (std::size_t m = 0; m < c.points.size(); ++m)
            if (s == c.points[m]) { // exact membership for generated frames
                ++counts[static_cast<int>(m)];
                found = true;
            }
        REQUIRE(found);
    }
    for (auto [m, cnt] : counts)
        REQUIRE(std::abs(cnt / static_cast<double>(n) - 0.25) < 0.01 * 0.25);

    SeededRng r1(7), r2(7);
    REQUIRE(draw_symbols(make_qam(16), 1, r1).symbols[0] ==
            draw_symbols(make_qam(16), 1, r2).symbols[0]);
    SeededRng r3(7);
    REQUIRE_THROWS_AS(draw_symbols(c, 0, r3), std::invalid_argument);
}

TEST_CASE("RRC taps: unit energy, symmetry, singular points finite") {
    for (double beta : {0.1, 0.15, 0.2}) {
        auto h = rrc_taps(beta, 32, 2);
        REQUIRE(h.size() == 65);
        double e = 0;
        for (double v : h) e += v * v;
        REQUIRE(e == Approx(1.0).margin(1e-12));
        for (std::size_t i = 0; i < h.size(); ++i) {
            REQUIRE(std::isfinite(h[i]));
            REQUIRE(h[i] == Approx(h[h.size() - 1 - i]).margin(1e-12));
        }
    }
}

TEST_CASE("RRC self-convolution is Nyquist to truncation accuracy") {
    // span 40 keeps the truncation ISI below -60 dB across the rolloff range
    for (double beta : {0.1, 0.2}) {
        auto h = rrc_taps(beta, 40, 2);
        ComplexSignal imp;
        imp.sps = 2;
        imp.samples.assign(h.begin(), h.end());
        ComplexSignal rc = fir_filter(imp, h, ConvMode::Full);
        const std::size_t center = h.size() - 1;
        REQUIRE(std::abs(rc.samples[center]) == Approx(1.0).margin(1e-3));
        for (int k = 1; k <= 19; ++k) {
            REQUIRE(std::abs(rc.samples[center + 2 * static_cast<std::size_t>(k)]) < 1e-3);
            REQUIRE(std::abs(rc.samples[center - 2 * static_cast<std::size_t>(k)]) < 1e-3);
        }
    }
}

TEST_CASE("upsample inserts zeros and preserves energy") {
    Constellation c = make_qam(4);
    SymbolFrame f;
    f.constellation = c;
    f.symbols = {cplx{1, 1}};
    ComplexSignal u = upsample(f, 2);
    REQUIRE(u.samples.size() == 2);
    REQUIRE(u.samples[0] == cplx{1, 1});
    REQUIRE(u.samples[1] == cplx{0, 0});

    f.symbols = {cplx{0.5, 0}, cplx{0, -2}};
    ComplexSignal id = upsample(f, 1);
    REQUIRE(id.samples == f.symbols);

    ComplexSignal u4 = upsample(f, 4);
    double e_in = 0, e_out = 0;
    for (auto s : f.symbols) e_in += std::norm(s);
    for (auto s : u4.samples) e_out += std::norm(s);
    REQUIRE(e_in == Approx(e_out));
}

TEST_CASE("fir_filter: impulse response, identity, hand-checked case") {
    ComplexSignal imp;
    imp.samples = {cplx{1, 0}};
    std::vector<cplx> taps = {{0.5, 0.1}, {0.25, 0}, {-1, 2}};
    ComplexSignal out = fir_filter(imp, taps, ConvMode::Full);
    REQUIRE(out.samples.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(out.samples[i] == taps[i]);

    ComplexSignal x;
    x.samples = {cplx{1, 2}, cplx{-3, 0.5}, cplx{0, 1}};
    ComplexSignal same = fir_filter(x, std::vector<cplx>{{1, 0}}, ConvMode::Same);
    REQUIRE(same.samples == x.samples);

    ComplexSignal h3;
    h3.samples = {cplx{1, 0}, cplx{0, 0}, cplx{0, 0}};
    ComplexSignal conv = fir_filter(h3, std::vector<cplx>{{0.5, 0}, {0.25, 0}}, ConvMode::Full);
    REQUIRE(conv.samples.size() == 4);
    REQUIRE(conv.samples[0] == cplx{0.5, 0});
    REQUIRE(conv.samples[1] == cplx{0.25, 0});
    REQUIRE(conv.samples[2] == cplx{0, 0});
    REQUIRE(conv.samples[3] == cplx{0, 0});

    REQUIRE_THROWS_AS(fir_filter(x, std::vector<cplx>{}, ConvMode::Full), std::invalid_argument);
}

TEST_CASE("fir_filter is linear") {
    SeededRng rng(3);
    ComplexSignal x, y;
    for (int i = 0; i < 32; ++i) {
        x.samples.push_back(rng.gaussian_pair());
        y.samples.push_back(rng.gaussian_pair());
    }
    std::vector<cplx> taps;
    for (int i = 0; i < 7; ++i) taps.push_back(rng.gaussian_pair());
    const cplx a{0.7, -0.3}, b{-1.1, 0.2};
    ComplexSignal mix;
    for (int i = 0; i < 32; ++i) mix.samples.push_back(a * x.samples[static_cast<std::size_t>(i)] +
                                                       b * y.samples[static_cast<std::size_t>(i)]);
    ComplexSignal lhs = fir_filter(mix, taps, ConvMode::Same);
    ComplexSignal fx = fir_filter(x, taps, ConvMode::Same);
    ComplexSignal fy = fir_filter(y, taps, ConvMode::Same);
    for (int i = 0; i < 32; ++i)
        REQUIRE(std::abs(lhs.samples[static_cast<std::size_t>(i)] -
                         (a * fx.samples[static_cast<std::size_t>(i)] +
                          b * fy.samples[static_cast<std::size_t>(i)])) < 1e-12);
}

TEST_CASE("decimate keeps the requested phase") {
    ComplexSignal x;
    x.samples = {cplx{1, 0}, cplx{2, 0}, cplx{3, 0}, cplx{4, 0}};
    x.sps = 2;
    auto even = decimate(x, 2, 0);
    REQUIRE(even.samples == std::vector<cplx>{{1, 0}, {3, 0}});
    auto odd = decimate(x, 2, 1);
    REQUIRE(odd.samples == std::vector<cplx>{{2, 0}, {4, 0}});
    auto id = decimate(x, 1, 0);
    REQUIRE(id.samples == x.samples);
    REQUIRE_THROWS_AS(decimate(x, 2, 2), std::invalid_argument);
}

TEST_CASE("add_awgn moments") {
    ComplexSignal zeros;
    zeros.samples.assign(1'000'000, cplx{0, 0});
    SeededRng rng(11);
    ComplexSignal id = add_awgn(zeros, 0.0, rng);
    REQUIRE(id.samples == zeros.samples);

    ComplexSignal noisy = add_awgn(zeros, 1.0, rng);
    double p = mean_power(noisy);
    REQUIRE(std::abs(p - 1.0) < 0.01);
    cplx mean{0, 0};
    for (auto v : noisy.samples) mean += v;
    mean /= static_cast<double>(noisy.samples.size());
    REQUIRE(std::abs(mean) < 3.0 / std::sqrt(1e6));
}

TEST_CASE("snr and dbm conversions") {
    Constellation c = make_qam(16);
    REQUIRE(snr_to_noise_variance(c, 20.0) == Approx(0.01).epsilon(1e-12));
    REQUIRE(snr_to_noise_variance(c, 0.0) == Approx(1.0).epsilon(1e-12));
    REQUIRE(snr_to_noise_variance(c, 21.0) == Approx(std::pow(10.0, -2.1)).epsilon(1e-12));
    REQUIRE(dbm_to_watts(0.0) == Approx(1e-3).epsilon(1e-12));
    REQUIRE(dbm_to_watts(30.0) == Approx(1.0).epsilon(1e-12));
    REQUIRE(dbm_to_watts(8.0) == Approx(6.309573444801933e-3).epsilon(1e-12));
    REQUIRE(watts_to_dbm(dbm_to_watts(7.25)) == Approx(7.25).epsilon(1e-12));
}

TEST_CASE("seeded pipeline is bit-identical across runs") {
    auto run = [](std::uint64_t seed) {
        SeededRng rng(seed);
        Constellation c = make_qam(16);
        SymbolFrame f = draw_symbols(c, 256, rng);
        ComplexSignal s = fir_filter(upsample(f, 2), rrc_taps(0.1, 32, 2), ConvMode::Same);
        return add_awgn(s, 0.05, rng).samples;
    };
    REQUIRE(run(99) == run(99));
    REQUIRE(run(99) != run(100));
}

TEST_CASE("rng fork gives decorrelated deterministic streams") {
    SeededRng a(5);
    SeededRng b = a.fork(1), c = a.fork(2), b2 = a.fork(1);
    REQUIRE(b.next_u64() == b2.next_u64());
    REQUIRE(b.next_u64() != c.next_u64());
}
