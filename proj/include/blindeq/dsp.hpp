#ifndef BLINDEQ_DSP_HPP
#define BLINDEQ_DSP_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "blindeq/rng.hpp"

namespace blindeq {

using cplx = std::complex<double>;

/// Set of M unit-average-energy complex modulation points. Doubles as the
/// fixed quantization codebook.
struct Constellation {
    std::vector<cplx> points;

    std::size_t order() const { return points.size(); }

    double mean_abs2() const {
        double s = 0;
        for (auto p : points) s += std::norm(p);
        return s / static_cast<double>(points.size());
    }

    double mean_abs4() const {
        double s = 0;
        for (auto p : points) s += std::norm(p) * std::norm(p);
        return s / static_cast<double>(points.size());
    }

    /// Dispersion constant R2 = E|x|^4 / E|x|^2 of the constant modulus criterion.
    double cma_r2() const { return mean_abs4() / mean_abs2(); }

    /// Nearest point in Euclidean distance; ties resolve to the lowest index.
    std::size_t nearest_index(cplx v) const {
        std::size_t best = 0;
        double bd = std::norm(v - points[0]);
        for (std::size_t m = 1; m < points.size(); ++m) {
            double d = std::norm(v - points[m]);
            if (d < bd) {
                bd = d;
                best = m;
            }
        }
        return best;
    }
};

struct SymbolFrame {
    std::vector<cplx> symbols;
    Constellation constellation;
};

/// Sampled complex baseband waveform with its samples-per-symbol rate.
struct ComplexSignal {
    std::vector<cplx> samples;
    int sps = 1;
};

inline double mean_power(const std::vector<cplx>& v) {
    if (v.empty()) return 0.0;
    double s = 0;
    for (auto x : v) s += std::norm(x);
    return s / static_cast<double>(v.size());
}

inline double mean_power(const ComplexSignal& s) { return mean_power(s.samples); }

namespace detail {
inline unsigned gray_decode(unsigned g) {
    unsigned b = 0;
    for (; g; g >>= 1) b ^= g;
    return b;
}
} // namespace detail

/// Square Gray-indexed QAM normalized to unit average energy.
/// Supported orders: 4, 16, 64, 256.
inline Constellation make_qam(int order) {
    if (order != 4 && order != 16 && order != 64 && order != 256)
        throw std::invalid_argument("make_qam: unsupported order");
    int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(order))));
    int bits_per_axis = 0;
    while ((1 << bits_per_axis) < side) ++bits_per_axis;
    // per-axis levels {..,-3,-1,1,3,..}; E{|x|^2} = 2*(side^2-1)/3 before scaling
    double scale = std::sqrt(3.0 / (2.0 * (static_cast<double>(side) * side - 1.0)));
    Constellation c;
    c.points.resize(static_cast<std::size_t>(order));
    for (int m = 0; m < order; ++m) {
        unsigned ib = static_cast<unsigned>(m) >> bits_per_axis;
        unsigned qb = static_cast<unsigned>(m) & ((1u << bits_per_axis) - 1u);
        int ipos = static_cast<int>(detail::gray_decode(ib));
        int qpos = static_cast<int>(detail::gray_decode(qb));
        double re = (2 * ipos - (side - 1)) * scale;
        double im = (2 * qpos - (side - 1)) * scale;
        c.points[static_cast<std::size_t>(m)] = {re, im};
    }
    return c;
}

/// n iid uniform draws from the constellation.
inline SymbolFrame draw_symbols(const Constellation& c, std::size_t n, SeededRng& rng) {
    if (n == 0) throw std::invalid_argument("draw_symbols: n must be positive");
    SymbolFrame f;
    f.constellation = c;
    f.symbols.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        f.symbols[i] = c.points[rng.uniform_int(c.points.size())];
    return f;
}

/// Root-raised-cosine impulse response, span_symbols*sps + 1 taps, unit energy.
/// The singular points t = 0 and |t| = 1/(4*rolloff) use the analytic limits.
inline std::vector<double> rrc_taps(double rolloff, int span_symbols, int sps) {
    if (!(rolloff > 0.0 && rolloff <= 1.0))
        throw std::invalid_argument("rrc_taps: rolloff must be in (0, 1]");
    if (span_symbols <= 0 || span_symbols % 2 != 0)
        throw std::invalid_argument("rrc_taps: span must be positive and even");
    if (sps < 1) throw std::invalid_argument("rrc_taps: sps must be >= 1");
    const double pi = std::numbers::pi;
    const int half = span_symbols * sps / 2;
    std::vector<double> h(static_cast<std::size_t>(2 * half + 1));
    for (int n = -half; n <= half; ++n) {
        double t = static_cast<double>(n) / sps;
        double v;
        if (n == 0) {
            v = 1.0 + rolloff * (4.0 / pi - 1.0);
        } else if (std::abs(1.0 - std::pow(4.0 * rolloff * t, 2)) < 1e-10) {
            v = (rolloff / std::sqrt(2.0)) *
                ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * rolloff)) +
                 (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * rolloff)));
        } else {
            v = (std::sin(pi * t * (1.0 - rolloff)) +
                 4.0 * rolloff * t * std::cos(pi * t * (1.0 + rolloff))) /
                (pi * t * (1.0 - std::pow(4.0 * rolloff * t, 2)));
        }
        h[static_cast<std::size_t>(n + half)] = v;
    }
    double e = 0;
    for (double v : h) e += v * v;
    double s = 1.0 / std::sqrt(e);
    for (double& v : h) v *= s;
    return h;
}

/// Zero insertion; output length N*factor at sps = factor.
inline ComplexSignal upsample(const SymbolFrame& frame, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample: factor must be >= 1");
    ComplexSignal out;
    out.sps = factor;
    out.samples.assign(frame.symbols.size() * static_cast<std::size_t>(factor), cplx{0, 0});
    for (std::size_t k = 0; k < frame.symbols.size(); ++k)
        out.samples[k * static_cast<std::size_t>(factor)] = frame.symbols[k];
    return out;
}

enum class ConvMode { Same, Full };

/// Linear convolution. Same mode is center-aligned: out[n] = sum_i taps[i] *
/// x[n + (L-1)/2 - i], so a unit tap vector of odd length is the identity.
template <typename TapT>
inline ComplexSignal fir_filter(const ComplexSignal& in, const std::vector<TapT>& taps,
                                ConvMode mode = ConvMode::Same) {
    if (taps.empty()) throw std::invalid_argument("fir_filter: empty taps");
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(in.samples.size());
    const std::ptrdiff_t L = static_cast<std::ptrdiff_t>(taps.size());
    ComplexSignal out;
    out.sps = in.sps;
    if (mode == ConvMode::Full) {
        out.samples.assign(static_cast<std::size_t>(n + L - 1), cplx{0, 0});
        for (std::ptrdiff_t k = 0; k < n + L - 1; ++k) {
            cplx acc{0, 0};
            std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, k - n + 1);
            std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(L - 1, k);
            for (std::ptrdiff_t i = i0; i <= i1; ++i)
                acc += cplx(taps[static_cast<std::size_t>(i)]) * in.samples[static_cast<std::size_t>(k - i)];
            out.samples[static_cast<std::size_t>(k)] = acc;
        }
    } else {
        const std::ptrdiff_t c = (L - 1) / 2;
        out.samples.assign(static_cast<std::size_t>(n), cplx{0, 0});
        for (std::ptrdiff_t k = 0; k < n; ++k) {
            cplx acc{0, 0};
            std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, k + c - n + 1);
            std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(L - 1, k + c);
            for (std::ptrdiff_t i = i0; i <= i1; ++i)
                acc += cplx(taps[static_cast<std::size_t>(i)]) * in.samples[static_cast<std::size_t>(k + c - i)];
            out.samples[static_cast<std::size_t>(k)] = acc;
        }
    }
    return out;
}

/// Keeps samples at indices phase, phase+factor, ...
inline ComplexSignal decimate(const ComplexSignal& in, int factor, int phase = 0) {
    if (factor < 1) throw std::invalid_argument("decimate: factor must be >= 1");
    if (phase < 0 || phase >= factor) throw std::invalid_argument("decimate: phase out of range");
    ComplexSignal out;
    out.sps = std::max(1, in.sps / factor);
    for (std::size_t i = static_cast<std::size_t>(phase); i < in.samples.size();
         i += static_cast<std::size_t>(factor))
        out.samples.push_back(in.samples[i]);
    return out;
}

/// Adds circularly symmetric complex Gaussian noise with total variance
/// noise_variance per sample (variance/2 per real dimension).
inline ComplexSignal add_awgn(const ComplexSignal& in, double noise_variance, SeededRng& rng) {
    if (noise_variance < 0) throw std::invalid_argument("add_awgn: negative variance");
    ComplexSignal out = in;
    if (noise_variance == 0.0) return out;
    const double s = std::sqrt(noise_variance);
    for (auto& v : out.samples) v += s * rng.gaussian_pair();
    return out;
}

/// sigma_w^2 = E{|x|^2} * 10^(-snr_db/10); unity symbol energy assumed.
inline double snr_to_noise_variance(const Constellation& c, double snr_db) {
    return c.mean_abs2() * std::pow(10.0, -snr_db / 10.0);
}

inline double dbm_to_watts(double p_dbm) { return std::pow(10.0, (p_dbm - 30.0) / 10.0); }

inline double watts_to_dbm(double p_watts) { return 10.0 * std::log10(p_watts) + 30.0; }

/// Theoretical symbol error rate of square M-QAM on AWGN at the given Es/N0.
inline double qam_awgn_ser(int order, double esn0_db) {
    const double m = static_cast<double>(order);
    const double gamma = std::pow(10.0, esn0_db / 10.0);
    const double arg = std::sqrt(3.0 * gamma / (m - 1.0));
    const double q = 0.5 * std::erfc(arg / std::sqrt(2.0));
    const double p_axis = 2.0 * (1.0 - 1.0 / std::sqrt(m)) * q;
    return 1.0 - (1.0 - p_axis) * (1.0 - p_axis);
}

/// Error vector magnitude (rms, relative to the reference rms) after a
/// least-squares complex gain fit of rx onto ref.
inline double evm(const std::vector<cplx>& rx, const std::vector<cplx>& ref) {
    if (rx.size() != ref.size() || rx.empty()) throw std::invalid_argument("evm: length mismatch");
    cplx num{0, 0};
    double den = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        num += std::conj(rx[i]) * ref[i];
        den += std::norm(rx[i]);
    }
    const cplx g = (den > 0) ? num / den : cplx{0, 0};
    double err = 0, refp = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        err += std::norm(g * rx[i] - ref[i]);
        refp += std::norm(ref[i]);
    }
    return std::sqrt(err / refp);
}

} // namespace blindeq

#endif
