#ifndef BLINDEQ_EQUALIZERS_HPP
#define BLINDEQ_EQUALIZERS_HPP

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "blindeq/channels.hpp"
#include "blindeq/diff.hpp"
#include "blindeq/dsp.hpp"

namespace blindeq {

// ---------------------------------------------------------------------------
// T/2-spaced FIR equalizer
// ---------------------------------------------------------------------------

/// Complex FIR operating on a 2-SPS input and producing symbol-rate output.
struct FirEqualizer {
    std::vector<cplx> taps; // odd length

    static FirEqualizer dirac(int n_taps) {
        if (n_taps < 1 || n_taps % 2 == 0)
            throw std::invalid_argument("FirEqualizer: tap count must be odd and positive");
        FirEqualizer eq;
        eq.taps.assign(static_cast<std::size_t>(n_taps), cplx{0, 0});
        eq.taps[static_cast<std::size_t>(n_taps / 2)] = cplx{1, 0};
        return eq;
    }
};

/// x~_k = sum_i taps[i] * y[2k + c - i] with c the center index; Dirac taps
/// therefore return the even-indexed samples.
inline std::vector<cplx> equalize_fir(const ComplexSignal& y, const FirEqualizer& eq) {
    if (eq.taps.size() > y.samples.size())
        throw std::invalid_argument("equalize_fir: more taps than samples");
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(y.samples.size());
    const std::ptrdiff_t T = static_cast<std::ptrdiff_t>(eq.taps.size());
    const std::ptrdiff_t c = (T - 1) / 2;
    const std::ptrdiff_t n_sym = n / 2;
    std::vector<cplx> out(static_cast<std::size_t>(n_sym));
    for (std::ptrdiff_t k = 0; k < n_sym; ++k) {
        cplx acc{0, 0};
        const std::ptrdiff_t base = 2 * k + c;
        const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, base - n + 1);
        const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(T - 1, base);
        for (std::ptrdiff_t i = i0; i <= i1; ++i)
            acc += eq.taps[static_cast<std::size_t>(i)] * y.samples[static_cast<std::size_t>(base - i)];
        out[static_cast<std::size_t>(k)] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hard demapper
// ---------------------------------------------------------------------------

/// Per-symbol nearest-neighbor decision; ties break to the lowest index.
inline SymbolFrame demap_hard(const std::vector<cplx>& x_tilde, const Constellation& c) {
    SymbolFrame f;
    f.constellation = c;
    f.symbols.resize(x_tilde.size());
    for (std::size_t k = 0; k < x_tilde.size(); ++k)
        f.symbols[k] = c.points[c.nearest_index(x_tilde[k])];
    return f;
}

inline std::vector<std::size_t> demap_indices(const std::vector<cplx>& x_tilde,
                                              const Constellation& c) {
    std::vector<std::size_t> idx(x_tilde.size());
    for (std::size_t k = 0; k < x_tilde.size(); ++k) idx[k] = c.nearest_index(x_tilde[k]);
    return idx;
}

// ---------------------------------------------------------------------------
// SER with optional ambiguity search
// ---------------------------------------------------------------------------

enum class SerSearch { None, Phase4, Phase4Delay };

struct SerResult {
    double ser = 1.0;
    int delay = 0;
    cplx rotation{1.0, 0.0};
    std::size_t errors = 0;
    std::size_t compared = 0;
};

/// SER between decided and transmitted frames, minimized over the requested
/// ambiguity set (quarter-turn rotations and/or integer delays). The reported
/// delay d means decided[k + d] lines up with truth[k]; the reported rotation
/// is the factor applied to the decisions.
inline SerResult align_and_ser(const SymbolFrame& decided, const SymbolFrame& truth,
                               SerSearch search = SerSearch::None, int max_delay = 16) {
    if (decided.symbols.empty() || truth.symbols.empty())
        throw std::invalid_argument("align_and_ser: empty frames");
    if (decided.symbols.size() != truth.symbols.size())
        throw std::invalid_argument("align_and_ser: length mismatch");
    const Constellation& c = truth.constellation;
    const std::size_t M = c.order();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(truth.symbols.size());

    std::vector<std::size_t> di = demap_indices(decided.symbols, c);
    std::vector<std::size_t> ti = demap_indices(truth.symbols, c);

    const std::array<cplx, 4> rots = {cplx{1, 0}, cplx{0, 1}, cplx{-1, 0}, cplx{0, -1}};
    const int n_rot = (search == SerSearch::None) ? 1 : 4;
    const int n_del = (search == SerSearch::Phase4Delay) ? max_delay : 0;

    // index permutation induced by each rotation (square QAM maps onto itself)
    std::vector<std::vector<std::size_t>> perms(static_cast<std::size_t>(n_rot));
    for (int r = 0; r < n_rot; ++r) {
        perms[static_cast<std::size_t>(r)].resize(M);
        for (std::size_t m = 0; m < M; ++m)
            perms[static_cast<std::size_t>(r)][m] =
                c.nearest_index(rots[static_cast<std::size_t>(r)] * c.points[m]);
    }

    SerResult best;
    bool first = true;
    for (int d = -n_del; d <= n_del; ++d) {
        for (int r = 0; r < n_rot; ++r) {
            std::size_t errors = 0, compared = 0;
            for (std::ptrdiff_t k = 0; k < n; ++k) {
                const std::ptrdiff_t kd = k + d;
                if (kd < 0 || kd >= n) continue;
                ++compared;
                if (perms[static_cast<std::size_t>(r)][di[static_cast<std::size_t>(kd)]] !=
                    ti[static_cast<std::size_t>(k)])
                    ++errors;
            }
            if (compared == 0) continue;
            const double ser = static_cast<double>(errors) / static_cast<double>(compared);
            if (first || ser < best.ser) {
                first = false;
                best.ser = ser;
                best.delay = d;
                best.rotation = rots[static_cast<std::size_t>(r)];
                best.errors = errors;
                best.compared = compared;
            }
        }
    }
    return best;
}

/// Genie-aided phase recovery for phase-blind equalizers (the constant
/// modulus cost is invariant to any rotation, not just quarter turns):
/// derotates the soft outputs by the least-squares phase against the known
/// symbols, per candidate delay, then demaps and counts.
inline SerResult genie_phase_ser(const std::vector<cplx>& x_tilde, const SymbolFrame& truth,
                                 int max_delay = 16) {
    if (x_tilde.empty() || x_tilde.size() != truth.symbols.size())
        throw std::invalid_argument("genie_phase_ser: length mismatch");
    const Constellation& c = truth.constellation;
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x_tilde.size());
    SerResult best;
    bool first = true;
    for (int d = -max_delay; d <= max_delay; ++d) {
        cplx acc{0, 0};
        for (std::ptrdiff_t k = 0; k < n; ++k) {
            const std::ptrdiff_t kd = k + d;
            if (kd < 0 || kd >= n) continue;
            acc += std::conj(x_tilde[static_cast<std::size_t>(kd)]) *
                   truth.symbols[static_cast<std::size_t>(k)];
        }
        if (acc == cplx{0, 0}) continue;
        const cplx rot = acc / std::abs(acc);
        std::size_t errors = 0, compared = 0;
        for (std::ptrdiff_t k = 0; k < n; ++k) {
            const std::ptrdiff_t kd = k + d;
            if (kd < 0 || kd >= n) continue;
            ++compared;
            if (c.nearest_index(rot * x_tilde[static_cast<std::size_t>(kd)]) !=
                c.nearest_index(truth.symbols[static_cast<std::size_t>(k)]))
                ++errors;
        }
        const double ser = static_cast<double>(errors) / static_cast<double>(compared);
        if (first || ser < best.ser) {
            first = false;
            best.ser = ser;
            best.delay = d;
            best.rotation = rot;
            best.errors = errors;
            best.compared = compared;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// GMP feature extractor
// ---------------------------------------------------------------------------

/// Index sets of the nonlinear feature vector taken from received samples.
struct FeatureExtractorConfig {
    GmpIndexSets sets;

    std::size_t feature_length() const { return sets.count(); }

    /// Position of the raw center sample (a-term p=1, l=0) in the canonical
    /// feature order; this is the pair the residual connection taps.
    std::ptrdiff_t center_feature_index() const {
        std::ptrdiff_t found = -1;
        detail::gmp_for_each(sets, [&](int kind, std::size_t idx, int p, int l, int) {
            if (kind == 0 && p == 1 && l == 0) found = static_cast<std::ptrdiff_t>(idx);
        });
        if (found < 0)
            throw std::logic_error("FeatureExtractorConfig: no (p=1, l=0) a-term for the residual");
        return found;
    }
};

/// Fiber-link configuration; feature length 127.
inline FeatureExtractorConfig fiber_feature_config() {
    FeatureExtractorConfig cfg;
    cfg.sets.p_a = {1, 3, 5};
    auto span = [](int lo, int hi) {
        std::vector<int> v;
        for (int i = lo; i <= hi; ++i) v.push_back(i);
        return v;
    };
    cfg.sets.l_a[1] = span(-21, 21);
    cfg.sets.l_a[3] = span(-5, 5);
    cfg.sets.l_a[5] = span(-3, 3);
    cfg.sets.p_b = {3};
    cfg.sets.l_b = span(-5, 5);
    cfg.sets.m_b = {1, 2, 3};
    cfg.sets.p_c = {3};
    cfg.sets.l_c = span(-5, 5);
    cfg.sets.m_c = {1, 2, 3};
    return cfg;
}

/// PA configuration; feature length 115.
inline FeatureExtractorConfig pa_feature_config() {
    FeatureExtractorConfig cfg;
    auto span = [](int lo, int hi) {
        std::vector<int> v;
        for (int i = lo; i <= hi; ++i) v.push_back(i);
        return v;
    };
    cfg.sets.p_a = {1, 2, 3, 4, 5, 6, 7};
    cfg.sets.l_a[1] = span(-15, 15);
    for (int p = 2; p <= 7; ++p) cfg.sets.l_a[p] = span(-3, 3);
    cfg.sets.p_b = {3};
    cfg.sets.l_b = span(-3, 3);
    cfg.sets.m_b = {1, 2, 3};
    cfg.sets.p_c = {3};
    cfg.sets.l_c = span(-3, 3);
    cfg.sets.m_c = {1, 2, 3};
    return cfg;
}

/// Nonlinear feature vector s^k for symbol k, built around the center sample
/// kappa = 2k of the 2-SPS observation; out-of-range samples read as zero.
inline std::vector<cplx> extract_gmp_features(const ComplexSignal& y,
                                              const FeatureExtractorConfig& cfg,
                                              std::ptrdiff_t k) {
    std::vector<cplx> s(cfg.feature_length());
    const std::ptrdiff_t kappa = 2 * k;
    std::size_t pos = 0;
    const std::size_t na = cfg.sets.count_a(), nb = cfg.sets.count_b();
    detail::gmp_for_each(cfg.sets, [&](int kind, std::size_t idx, int p, int l, int m) {
        std::size_t where = (kind == 0 ? idx : kind == 1 ? na + idx : na + nb + idx);
        s[where] = detail::gmp_basis_term(y.samples, kappa, kind, p, l, m);
    });
    (void)pos;
    return s;
}

inline std::vector<double> features_to_real(const std::vector<cplx>& s) {
    std::vector<double> r(2 * s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        r[2 * i] = s[i].real();
        r[2 * i + 1] = s[i].imag();
    }
    return r;
}

/// Per-symbol MLP over the feature vector; the residual connection adds the
/// raw center sample through the (p=1, l=0) feature pair.
inline std::vector<cplx> equalize_nn(const ComplexSignal& y, const FeatureExtractorConfig& cfg,
                                     const MlpSpec& spec, const MlpParams& params) {
    if (spec.layer_widths[0] != static_cast<int>(2 * cfg.feature_length()))
        throw std::invalid_argument("equalize_nn: MLP input width mismatch");
    const std::ptrdiff_t n_sym = static_cast<std::ptrdiff_t>(y.samples.size()) / 2;
    std::vector<cplx> out(static_cast<std::size_t>(n_sym));
    std::vector<double> o;
    for (std::ptrdiff_t k = 0; k < n_sym; ++k) {
        auto feats = features_to_real(extract_gmp_features(y, cfg, k));
        mlp_forward(spec, params, feats, o);
        out[static_cast<std::size_t>(k)] = {o[0], o[1]};
    }
    return out;
}

} // namespace blindeq

#endif
