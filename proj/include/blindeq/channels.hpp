#ifndef BLINDEQ_CHANNELS_HPP
#define BLINDEQ_CHANNELS_HPP

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "blindeq/dsp.hpp"
#include "blindeq/fft.hpp"
#include "blindeq/rng.hpp"

namespace blindeq {

// ---------------------------------------------------------------------------
// Linear ISI channel
// ---------------------------------------------------------------------------

/// y = h * x + n at 2 SPS.
struct LinearIsiChannel {
    std::vector<cplx> taps_h;
    double noise_variance = 0.0;
};

/// Five-tap T/2-spaced test channel used by the linear-channel experiments.
inline std::vector<cplx> default_linear_channel_taps() {
    return {{0.055, 0.05}, {0.283, -0.120}, {-0.768, 0.279}, {-0.064, -0.058}, {0.047, -0.023}};
}

inline ComplexSignal linear_channel_apply(const ComplexSignal& tx, const LinearIsiChannel& ch,
                                          SeededRng& rng) {
    if (ch.taps_h.empty()) throw std::invalid_argument("linear_channel_apply: empty taps");
    if (ch.noise_variance < 0) throw std::invalid_argument("linear_channel_apply: negative variance");
    ComplexSignal y = fir_filter(tx, ch.taps_h, ConvMode::Same);
    return add_awgn(y, ch.noise_variance, rng);
}

// ---------------------------------------------------------------------------
// Split-step fiber
// ---------------------------------------------------------------------------

struct FiberLink {
    double alpha_db_per_km = 0.2;
    double beta2_ps2_per_km = -21.683;
    double gamma_per_w_km = 1.3;
    double length_km = 110.0;
    int ssfm_steps = 100;
    double launch_power_dbm = 8.0;
    double rx_noise_dbm = -33.5;
    double lpf_bandwidth_ghz = 45.0;   // two-sided passband width
    double rx_sample_rate_ghz = 50.0;
    double cd_precomp_fraction = 0.9;
    double symbol_rate_gbaud = 25.0;
    int sim_sps = 8;
};

inline FiberLink make_ssmf_link() { return FiberLink{}; }

inline FiberLink make_nzdsf_link() {
    FiberLink f;
    f.alpha_db_per_km = 0.21;
    f.beta2_ps2_per_km = -4.0;
    f.gamma_per_w_km = 1.6;
    return f;
}

enum class Direction { Forward, Backward };

/// Symmetric split-step Fourier propagation of the scalar NLSE. The waveform
/// is in sqrt(W) units; the grid rate is symbol_rate * waveform.sps. Backward
/// runs the mirrored steps with negated alpha, beta2, gamma, which inverts the
/// forward operator exactly when no filtering happens in between.
inline ComplexSignal ssfm_propagate(const ComplexSignal& in, const FiberLink& fiber,
                                    Direction dir = Direction::Forward) {
    if (fiber.ssfm_steps < 1) throw std::invalid_argument("ssfm: steps must be >= 1");
    if (fiber.length_km <= 0) throw std::invalid_argument("ssfm: length must be positive");
    const std::size_t n = in.samples.size();
    const double sgn = (dir == Direction::Forward) ? 1.0 : -1.0;
    const double alpha_np = sgn * fiber.alpha_db_per_km * std::numbers::ln10 / 10.0; // power nepers/km
    const double beta2 = sgn * fiber.beta2_ps2_per_km;
    const double gamma = sgn * fiber.gamma_per_w_km;
    const double dz = fiber.length_km / fiber.ssfm_steps;

    // angular frequency grid in rad/ps
    const double sample_rate_thz = fiber.symbol_rate_gbaud * in.sps * 1e-3;
    std::vector<double> freq = fft_freqs(n);
    std::vector<cplx> half(n), full(n);
    for (std::size_t k = 0; k < n; ++k) {
        double w = 2.0 * std::numbers::pi * freq[k] * sample_rate_thz;
        cplx lin = cplx(-alpha_np / 2.0, beta2 / 2.0 * w * w);
        half[k] = std::exp(lin * (dz / 2.0));
        full[k] = half[k] * half[k];
    }

    Eigen::FFT<double> fft;
    std::vector<cplx> spec, field = in.samples;
    auto linear_step = [&](const std::vector<cplx>& mult) {
        fft.fwd(spec, field);
        for (std::size_t k = 0; k < n; ++k) spec[k] *= mult[k];
        fft.inv(field, spec);
    };
    auto nonlinear_step = [&]() {
        for (auto& a : field) {
            double phi = gamma * std::norm(a) * dz;
            a *= cplx(std::cos(phi), std::sin(phi));
        }
    };

    linear_step(half);
    for (int s = 0; s < fiber.ssfm_steps; ++s) {
        nonlinear_step();
        linear_step(s + 1 < fiber.ssfm_steps ? full : half);
    }
    for (auto a : field)
        if (!std::isfinite(a.real()) || !std::isfinite(a.imag()))
            throw std::runtime_error("ssfm: non-finite sample (power overflow)");
    ComplexSignal out;
    out.sps = in.sps;
    out.samples = std::move(field);
    return out;
}

/// Frequency-domain all-pass inverting the accumulated dispersion of a
/// forward propagation over the given distance.
inline ComplexSignal cd_compensate(const ComplexSignal& in, double beta2_ps2_per_km,
                                   double distance_km, double sample_rate_ghz) {
    const std::size_t n = in.samples.size();
    if (n < 2) throw std::invalid_argument("cd_compensate: signal too short");
    const double rate_thz = sample_rate_ghz * 1e-3;
    std::vector<double> freq = fft_freqs(n);
    Eigen::FFT<double> fft;
    std::vector<cplx> spec;
    fft.fwd(spec, in.samples);
    for (std::size_t k = 0; k < n; ++k) {
        double w = 2.0 * std::numbers::pi * freq[k] * rate_thz;
        double phi = -beta2_ps2_per_km / 2.0 * w * w * distance_km;
        spec[k] *= cplx(std::cos(phi), std::sin(phi));
    }
    ComplexSignal out;
    out.sps = in.sps;
    fft.inv(out.samples, spec);
    return out;
}

/// Brick-wall low-pass; bandwidth is the two-sided passband width, so bins
/// with |f| > bandwidth/2 are zeroed.
inline ComplexSignal brickwall_lpf(const ComplexSignal& in, double bandwidth_ghz,
                                   double sample_rate_ghz) {
    const std::size_t n = in.samples.size();
    std::vector<double> freq = fft_freqs(n);
    Eigen::FFT<double> fft;
    std::vector<cplx> spec;
    fft.fwd(spec, in.samples);
    const double cutoff = bandwidth_ghz / 2.0 / sample_rate_ghz; // cycles/sample
    for (std::size_t k = 0; k < n; ++k)
        if (std::abs(freq[k]) > cutoff) spec[k] = cplx{0, 0};
    ComplexSignal out;
    out.sps = in.sps;
    fft.inv(out.samples, spec);
    return out;
}

inline constexpr int kPulseSpanSymbols = 40;

/// Transmit + fiber + coherent receiver front end. Output is the 2-SPS
/// observation in sqrt(W) units after receiver noise, brick-wall filtering,
/// resampling and coarse static CD compensation.
inline ComplexSignal fiber_link_apply(const SymbolFrame& tx_symbols, const FiberLink& fiber,
                                      double ps_rolloff, SeededRng& rng) {
    ComplexSignal up = upsample(tx_symbols, fiber.sim_sps);
    auto ps = rrc_taps(ps_rolloff, kPulseSpanSymbols, fiber.sim_sps);
    ComplexSignal shaped = fir_filter(up, ps, ConvMode::Same);

    const double p_launch = dbm_to_watts(fiber.launch_power_dbm);
    const double scale = std::sqrt(p_launch / mean_power(shaped));
    for (auto& v : shaped.samples) v *= scale;

    ComplexSignal rx = ssfm_propagate(shaped, fiber, Direction::Forward);

    // rx_noise_dbm is the in-band noise power: white noise is injected over
    // the full simulation band with its variance scaled so the portion
    // surviving the brick-wall filter totals the configured power. This
    // reproduces the stated back-to-back operating point (-20 dBm sensitivity
    // against -33.5 dBm noise -> pre-FEC BER 1.25e-2 for 16-QAM).
    const double sim_rate_ghz = fiber.symbol_rate_gbaud * fiber.sim_sps;
    if (fiber.rx_noise_dbm > -300.0) {
        const double inband_fraction = fiber.lpf_bandwidth_ghz / sim_rate_ghz;
        rx = add_awgn(rx, dbm_to_watts(fiber.rx_noise_dbm) / inband_fraction, rng);
    }

    rx = brickwall_lpf(rx, fiber.lpf_bandwidth_ghz, sim_rate_ghz);

    const double ratio = sim_rate_ghz / fiber.rx_sample_rate_ghz;
    const int dec = static_cast<int>(std::lround(ratio));
    if (std::abs(ratio - dec) > 1e-9 || dec < 1)
        throw std::invalid_argument("fiber_link_apply: rx rate must divide the simulation rate");
    rx = decimate(rx, dec, 0);
    rx.sps = static_cast<int>(std::lround(fiber.rx_sample_rate_ghz / fiber.symbol_rate_gbaud));

    if (fiber.cd_precomp_fraction > 0.0)
        rx = cd_compensate(rx, fiber.beta2_ps2_per_km,
                           fiber.cd_precomp_fraction * fiber.length_km, fiber.rx_sample_rate_ghz);
    return rx;
}

/// Digital backpropagation on the receiver-rate observation: re-applies the
/// static CD already compensated, runs the mirrored split-step backward with
/// the requested step count, matched-filters and downsamples to 1 SPS.
inline ComplexSignal dbp(const ComplexSignal& rx, const FiberLink& fiber, int steps,
                         double ps_rolloff = 0.1) {
    ComplexSignal s = rx;
    if (fiber.cd_precomp_fraction > 0.0)
        s = cd_compensate(s, fiber.beta2_ps2_per_km,
                          -fiber.cd_precomp_fraction * fiber.length_km, fiber.rx_sample_rate_ghz);
    FiberLink back = fiber;
    back.ssfm_steps = steps;
    back.sim_sps = static_cast<int>(std::lround(fiber.rx_sample_rate_ghz / fiber.symbol_rate_gbaud));
    s.sps = back.sim_sps;
    s = ssfm_propagate(s, back, Direction::Backward);

    auto mf = rrc_taps(ps_rolloff, kPulseSpanSymbols, s.sps);
    s = fir_filter(s, mf, ConvMode::Same);
    ComplexSignal sym = decimate(s, s.sps, 0);
    sym.sps = 1;
    const double p = mean_power(sym);
    if (p > 0) {
        const double g = 1.0 / std::sqrt(p);
        for (auto& v : sym.samples) v *= g;
    }
    return sym;
}

// ---------------------------------------------------------------------------
// Generalized memory polynomial
// ---------------------------------------------------------------------------

/// Index sets of the GMP basis. l_b / l_c / m_b / m_c are shared across the
/// orders in p_b / p_c.
struct GmpIndexSets {
    std::vector<int> p_a;
    std::map<int, std::vector<int>> l_a; // per nonlinear order
    std::vector<int> p_b;
    std::vector<int> l_b;
    std::vector<int> m_b;
    std::vector<int> p_c;
    std::vector<int> l_c;
    std::vector<int> m_c;

    std::size_t count_a() const {
        std::size_t n = 0;
        for (int p : p_a) n += l_a.at(p).size();
        return n;
    }
    std::size_t count_b() const { return p_b.size() * l_b.size() * m_b.size(); }
    std::size_t count_c() const { return p_c.size() * l_c.size() * m_c.size(); }
    std::size_t count() const { return count_a() + count_b() + count_c(); }
};

/// Coefficients live in three flat vectors following the canonical iteration
/// order: a over (p, l), b and c over (p, l, m), each loop nested in that order.
struct GmpModel {
    GmpIndexSets sets;
    std::vector<cplx> a, b, c;

    static GmpModel zero(const GmpIndexSets& s) {
        GmpModel m;
        m.sets = s;
        m.a.assign(s.count_a(), cplx{0, 0});
        m.b.assign(s.count_b(), cplx{0, 0});
        m.c.assign(s.count_c(), cplx{0, 0});
        return m;
    }

    cplx& a_at(int p, int l) {
        std::size_t idx = 0;
        for (int pp : sets.p_a) {
            const auto& lags = sets.l_a.at(pp);
            for (std::size_t j = 0; j < lags.size(); ++j, ++idx)
                if (pp == p && lags[j] == l) return a[idx];
        }
        throw std::out_of_range("GmpModel: (p,l) not in a-term index sets");
    }
};

namespace detail {
template <typename F>
inline void gmp_for_each(const GmpIndexSets& s, F&& f) {
    // kind 0 = a, 1 = b, 2 = c; for a-terms m is 0
    std::size_t ia = 0;
    for (int p : s.p_a)
        for (int l : s.l_a.at(p)) f(0, ia++, p, l, 0);
    std::size_t ib = 0;
    for (int p : s.p_b)
        for (int l : s.l_b)
            for (int m : s.m_b) f(1, ib++, p, l, m);
    std::size_t ic = 0;
    for (int p : s.p_c)
        for (int l : s.l_c)
            for (int m : s.m_c) f(2, ic++, p, l, m);
}

inline double env_pow(double a, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= a;
    return r;
}

inline cplx gmp_basis_term(const std::vector<cplx>& x, std::ptrdiff_t k, int kind, int p, int l,
                           int m) {
    auto at = [&](std::ptrdiff_t i) -> cplx {
        return (i >= 0 && i < static_cast<std::ptrdiff_t>(x.size())) ? x[static_cast<std::size_t>(i)]
                                                                     : cplx{0, 0};
    };
    cplx lin = at(k - l);
    std::ptrdiff_t env_idx = (kind == 0) ? k - l : (kind == 1 ? k - l - m : k - l + m);
    return lin * env_pow(std::abs(at(env_idx)), p - 1);
}
} // namespace detail

/// out_k = sum a_{p,l} x_{k-l}|x_{k-l}|^{p-1}
///       + sum b_{p,l,m} x_{k-l}|x_{k-l-m}|^{p-1}
///       + sum c_{p,l,m} x_{k-l}|x_{k-l+m}|^{p-1}, zero padding at the edges.
inline ComplexSignal gmp_apply(const ComplexSignal& in, const GmpModel& model) {
    ComplexSignal out;
    out.sps = in.sps;
    out.samples.assign(in.samples.size(), cplx{0, 0});
    const auto& x = in.samples;
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());

    struct Term {
        cplx coef;
        int lin_lag;
        int env_lag;
        int pm1;
    };
    std::vector<Term> terms;
    detail::gmp_for_each(model.sets, [&](int kind, std::size_t idx, int p, int l, int m) {
        const cplx coef = (kind == 0 ? model.a[idx] : kind == 1 ? model.b[idx] : model.c[idx]);
        if (coef == cplx{0, 0}) return;
        int env = (kind == 0) ? l : (kind == 1 ? l + m : l - m);
        terms.push_back({coef, l, env, p - 1});
    });
    int pmax1 = 0;
    for (const auto& t : terms) pmax1 = std::max(pmax1, t.pm1);

    // abs_pow[e] holds |x_i|^e
    std::vector<std::vector<double>> abs_pow(static_cast<std::size_t>(pmax1) + 1);
    abs_pow[0].assign(x.size(), 1.0);
    if (pmax1 >= 1) {
        abs_pow[1].resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) abs_pow[1][i] = std::abs(x[i]);
        for (int e = 2; e <= pmax1; ++e) {
            abs_pow[static_cast<std::size_t>(e)].resize(x.size());
            for (std::size_t i = 0; i < x.size(); ++i)
                abs_pow[static_cast<std::size_t>(e)][i] = abs_pow[static_cast<std::size_t>(e - 1)][i] * abs_pow[1][i];
        }
    }

    for (std::ptrdiff_t k = 0; k < n; ++k) {
        cplx acc{0, 0};
        for (const auto& t : terms) {
            std::ptrdiff_t il = k - t.lin_lag;
            std::ptrdiff_t ie = k - t.env_lag;
            if (il < 0 || il >= n) continue;
            double env = (ie >= 0 && ie < n)
                             ? abs_pow[static_cast<std::size_t>(t.pm1)][static_cast<std::size_t>(ie)]
                             : (t.pm1 == 0 ? 1.0 : 0.0);
            acc += t.coef * x[static_cast<std::size_t>(il)] * env;
        }
        out.samples[static_cast<std::size_t>(k)] = acc;
    }
    return out;
}

/// Least-squares fit of the GMP basis to an (input, output) record.
inline GmpModel gmp_fit(const ComplexSignal& input, const ComplexSignal& output,
                        const GmpIndexSets& sets) {
    if (input.samples.size() != output.samples.size())
        throw std::invalid_argument("gmp_fit: length mismatch");
    const std::size_t n = input.samples.size();
    const std::size_t ncoef = sets.count();
    if (n < ncoef) throw std::invalid_argument("gmp_fit: fewer samples than coefficients");

    Eigen::MatrixXcd phi(n, ncoef);
    std::size_t col_a = 0, col_b = sets.count_a(), col_c = sets.count_a() + sets.count_b();
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n); ++k) {
        detail::gmp_for_each(sets, [&](int kind, std::size_t idx, int p, int l, int m) {
            std::size_t col = (kind == 0 ? col_a : kind == 1 ? col_b : col_c) + idx;
            phi(k, static_cast<Eigen::Index>(col)) =
                detail::gmp_basis_term(input.samples, k, kind, p, l, m);
        });
    }
    Eigen::Map<const Eigen::VectorXcd> y(output.samples.data(), static_cast<Eigen::Index>(n));
    Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(phi);
    if (qr.rank() < static_cast<Eigen::Index>(ncoef))
        throw std::runtime_error("gmp_fit: rank-deficient regressor matrix");
    Eigen::VectorXcd coef = qr.solve(y);

    GmpModel model = GmpModel::zero(sets);
    for (std::size_t i = 0; i < sets.count_a(); ++i) model.a[i] = coef(static_cast<Eigen::Index>(i));
    for (std::size_t i = 0; i < sets.count_b(); ++i)
        model.b[i] = coef(static_cast<Eigen::Index>(col_b + i));
    for (std::size_t i = 0; i < sets.count_c(); ++i)
        model.c[i] = coef(static_cast<Eigen::Index>(col_c + i));
    return model;
}

/// Plain-text coefficient table, one line per (kind, p, l, m, re, im).
inline void gmp_save(const GmpModel& model, std::ostream& os) {
    os.precision(17);
    detail::gmp_for_each(model.sets, [&](int kind, std::size_t idx, int p, int l, int m) {
        const cplx v = (kind == 0 ? model.a[idx] : kind == 1 ? model.b[idx] : model.c[idx]);
        os << "abc"[kind] << ' ' << p << ' ' << l << ' ' << m << ' ' << v.real() << ' ' << v.imag()
           << '\n';
    });
}

inline GmpModel gmp_load(std::istream& is) {
    struct Entry {
        char kind;
        int p, l, m;
        cplx v;
    };
    std::vector<Entry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        Entry e{};
        double re, im;
        if (!(ls >> e.kind >> e.p >> e.l >> e.m >> re >> im))
            throw std::runtime_error("gmp_load: malformed line: " + line);
        e.v = {re, im};
        entries.push_back(e);
    }
    GmpIndexSets sets;
    auto push_unique = [](std::vector<int>& v, int x) {
        for (int e : v)
            if (e == x) return;
        v.push_back(x);
    };
    for (const auto& e : entries) {
        if (e.kind == 'a') {
            push_unique(sets.p_a, e.p);
            push_unique(sets.l_a[e.p], e.l);
        } else if (e.kind == 'b') {
            push_unique(sets.p_b, e.p);
            push_unique(sets.l_b, e.l);
            push_unique(sets.m_b, e.m);
        } else if (e.kind == 'c') {
            push_unique(sets.p_c, e.p);
            push_unique(sets.l_c, e.l);
            push_unique(sets.m_c, e.m);
        } else {
            throw std::runtime_error("gmp_load: unknown kind");
        }
    }
    GmpModel model = GmpModel::zero(sets);
    for (const auto& e : entries) {
        bool stored = false;
        detail::gmp_for_each(sets, [&](int kind, std::size_t idx, int p, int l, int m) {
            const char kc = "abc"[kind];
            if (kc == e.kind && p == e.p && l == e.l && (kind == 0 || m == e.m)) {
                (kind == 0 ? model.a[idx] : kind == 1 ? model.b[idx] : model.c[idx]) = e.v;
                stored = true;
            }
        });
        if (!stored) throw std::runtime_error("gmp_load: inconsistent index sets");
    }
    return model;
}

// ---------------------------------------------------------------------------
// Power-amplifier channel
// ---------------------------------------------------------------------------

/// PA behavioral channel. Voltages follow the measurement convention of a
/// 50-ohm load: avg power P dBm corresponds to mean |v|^2 = 10^((P-30)/10) * 50.
struct PaChannel {
    GmpModel pa;
    double noise_std_volts = 0.4; // std of the complex noise sample
    double avg_output_power_dbm = 33.0;
    bool noise_std_is_per_dim = false;
    double load_ohms = 50.0;
};

inline constexpr int kPaUpsampling = 2;

/// Full model orders P = {1..7}, lags {0,1,2}, cross memory {1}. The p=1
/// cross terms are omitted: y_{k-l}|.|^0 duplicates the a-term of the same
/// lag and makes the regressor singular.
inline GmpIndexSets pa_model_index_sets() {
    GmpIndexSets s;
    s.p_a = {1, 2, 3, 4, 5, 6, 7};
    for (int p : s.p_a) s.l_a[p] = {0, 1, 2};
    s.p_b = {2, 3, 4, 5, 6, 7};
    s.l_b = {0, 1, 2};
    s.m_b = {1};
    s.p_c = {2, 3, 4, 5, 6, 7};
    s.l_c = {0, 1, 2};
    s.m_c = {1};
    return s;
}

/// Synthetic stand-in for a measured amplifier: a Wiener-Hammerstein
/// reference (short FIR, soft limiter, short FIR) fitted with the GMP basis
/// over the drive range of the power sweep. Deterministic; ~16x gain,
/// saturation near 26 V output amplitude, so a 29-37 dBm output sweep spans
/// the near-linear through strongly compressed regions.
inline GmpModel make_surrogate_pa() {
    const double gain = 16.0;
    const double vsat = 26.0;
    const double smooth = 2.5;
    const std::vector<cplx> pre = {{1.0, 0.0}, {0.12, -0.05}, {0.03, 0.02}};
    const std::vector<cplx> post = {{1.0, 0.0}, {0.08, 0.03}};

    auto reference = [&](const ComplexSignal& x) {
        ComplexSignal u = fir_filter(x, pre, ConvMode::Same);
        for (auto& v : u.samples) {
            double amp = std::abs(v) * gain;
            double comp = gain / std::pow(1.0 + std::pow(amp / vsat, 2.0 * smooth), 1.0 / (2.0 * smooth));
            v *= comp;
        }
        return fir_filter(u, post, ConvMode::Same);
    };

    // Training waveform: 64-QAM, RRC 20%, 2 SPS, at drive levels covering the
    // whole power sweep including deep saturation.
    auto fit_once = [&]() {
        SeededRng rng(0x5047u);
        Constellation qam = make_qam(64);
        auto ps = rrc_taps(0.2, kPulseSpanSymbols, kPaUpsampling);
        ComplexSignal in;
        in.sps = kPaUpsampling;
        for (double in_rms : {0.2, 0.4, 0.6, 0.8, 1.0, 1.3, 1.6, 2.0}) {
            SymbolFrame f = draw_symbols(qam, 1536, rng);
            ComplexSignal s = fir_filter(upsample(f, kPaUpsampling), ps, ConvMode::Same);
            double g = in_rms / std::sqrt(mean_power(s));
            for (auto v : s.samples) in.samples.push_back(v * g);
        }
        ComplexSignal out = reference(in);
        return gmp_fit(in, out, pa_model_index_sets());
    };
    static const GmpModel cached = fit_once();
    return cached;
}

/// Pulse shape, drive the PA so its output hits the configured average power,
/// then add the fixed-variance channel noise. Output at 2 SPS in volts.
inline ComplexSignal pa_channel_apply(const SymbolFrame& tx_symbols, const PaChannel& ch,
                                      double ps_rolloff, SeededRng& rng) {
    ComplexSignal shaped = fir_filter(upsample(tx_symbols, kPaUpsampling),
                                      rrc_taps(ps_rolloff, kPulseSpanSymbols, kPaUpsampling),
                                      ConvMode::Same);
    const double target = dbm_to_watts(ch.avg_output_power_dbm) * ch.load_ohms;

    // solve for the drive level on a probe slice, then apply to the full frame
    ComplexSignal probe;
    probe.sps = shaped.sps;
    probe.samples.assign(shaped.samples.begin(),
                         shaped.samples.begin() +
                             static_cast<std::ptrdiff_t>(std::min<std::size_t>(shaped.samples.size(), 16384)));
    auto out_power = [&](double s) {
        ComplexSignal x = probe;
        for (auto& v : x.samples) v *= s;
        return mean_power(gmp_apply(x, ch.pa));
    };
    // bracket then bisect the (monotone below saturation) drive-to-power map
    double lo = 1e-6, hi = 1e-3;
    while (out_power(hi) < target) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e6) throw std::runtime_error("pa_channel_apply: target output power unreachable");
    }
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        if (out_power(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    const double drive = 0.5 * (lo + hi);
    for (auto& v : shaped.samples) v *= drive;
    ComplexSignal y = gmp_apply(shaped, ch.pa);
    const double var =
        ch.noise_std_is_per_dim ? 2.0 * ch.noise_std_volts * ch.noise_std_volts
                                : ch.noise_std_volts * ch.noise_std_volts;
    return add_awgn(y, var, rng);
}

} // namespace blindeq

#endif
