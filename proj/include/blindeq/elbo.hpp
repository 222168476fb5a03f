#ifndef BLINDEQ_ELBO_HPP
#define BLINDEQ_ELBO_HPP

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "blindeq/channels.hpp"
#include "blindeq/dsp.hpp"

namespace blindeq {

/// Row-stochastic N x M soft symbol posterior.
struct SoftQ {
    std::size_t n = 0, m = 0;
    std::vector<double> q; // row-major

    double at(std::size_t k, std::size_t mm) const { return q[k * m + mm]; }
    double& at(std::size_t k, std::size_t mm) { return q[k * m + mm]; }
};

/// Q_{k,m} proportional to exp(-|x~_k - X_m|^2 / sigma_d^2), row-normalized.
inline SoftQ vae_decoder_soft(const std::vector<cplx>& x_tilde, const Constellation& c,
                              double sigma_d2) {
    if (sigma_d2 <= 0) throw std::invalid_argument("vae_decoder_soft: sigma_d2 must be positive");
    SoftQ Q;
    Q.n = x_tilde.size();
    Q.m = c.order();
    Q.q.resize(Q.n * Q.m);
    std::vector<double> z(Q.m);
    for (std::size_t k = 0; k < Q.n; ++k) {
        double zmax = -1e300;
        for (std::size_t mm = 0; mm < Q.m; ++mm) {
            z[mm] = -std::norm(x_tilde[k] - c.points[mm]) / sigma_d2;
            zmax = std::max(zmax, z[mm]);
        }
        double s = 0;
        for (std::size_t mm = 0; mm < Q.m; ++mm) {
            z[mm] = std::exp(z[mm] - zmax);
            s += z[mm];
        }
        for (std::size_t mm = 0; mm < Q.m; ++mm) Q.at(k, mm) = z[mm] / s;
    }
    return Q;
}

/// Posterior entropy -sum Q ln Q (0 ln 0 = 0).
inline double soft_entropy(const SoftQ& Q) {
    double h = 0;
    for (double v : Q.q)
        if (v > 0) h -= v * std::log(v);
    return h;
}

namespace detail {

/// Per-symbol first moments E{x}, second moments E{|x|^2} under Q.
inline void q_moments(const SoftQ& Q, const Constellation& c, std::vector<cplx>& mean,
                      std::vector<double>& second) {
    mean.assign(Q.n, cplx{0, 0});
    second.assign(Q.n, 0.0);
    for (std::size_t k = 0; k < Q.n; ++k)
        for (std::size_t mm = 0; mm < Q.m; ++mm) {
            const double q = Q.at(k, mm);
            mean[k] += q * c.points[mm];
            second[k] += q * std::norm(c.points[mm]);
        }
}

} // namespace detail

/// Closed-form ELBO of the linear AWGN channel model, up to the constant C
/// (the pi^S factor and the uniform prior both drop):
///   ELBO = -S ln(sigma_w^2) - A / sigma_w^2 + H(Q),
/// with A the posterior expectation of |y - X h|^2. The model mean is the
/// center-aligned convolution of the zero-stuffed first moments with h; the
/// posterior factorizes, so the quadratic term splits into |y - y_hat|^2 plus
/// the per-symbol variance weighted by the tap energies.
inline double elbo_linear(const std::vector<cplx>& y, const SoftQ& Q, const std::vector<cplx>& h,
                          double sigma_w2, int sps, const Constellation& c) {
    if (sigma_w2 <= 0) throw std::invalid_argument("elbo_linear: sigma_w2 must be positive");
    if (h.empty()) throw std::invalid_argument("elbo_linear: empty taps");
    if (y.size() != Q.n * static_cast<std::size_t>(sps))
        throw std::invalid_argument("elbo_linear: y length must be sps * N");

    std::vector<cplx> mean;
    std::vector<double> second;
    detail::q_moments(Q, c, mean, second);

    ComplexSignal stuffed;
    stuffed.sps = sps;
    stuffed.samples.assign(y.size(), cplx{0, 0});
    std::vector<double> var(y.size(), 0.0);
    for (std::size_t k = 0; k < Q.n; ++k) {
        stuffed.samples[k * static_cast<std::size_t>(sps)] = mean[k];
        var[k * static_cast<std::size_t>(sps)] = second[k] - std::norm(mean[k]);
    }
    ComplexSignal yhat = fir_filter(stuffed, h, ConvMode::Same);

    const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(y.size());
    const std::ptrdiff_t L = static_cast<std::ptrdiff_t>(h.size());
    const std::ptrdiff_t ce = (L - 1) / 2;
    double A = 0;
    for (std::ptrdiff_t n = 0; n < S; ++n) {
        A += std::norm(y[static_cast<std::size_t>(n)] - yhat.samples[static_cast<std::size_t>(n)]);
        for (std::ptrdiff_t i = 0; i < L; ++i) {
            const std::ptrdiff_t j = n + ce - i;
            if (j >= 0 && j < S)
                A += std::norm(h[static_cast<std::size_t>(i)]) * var[static_cast<std::size_t>(j)];
        }
    }
    return -static_cast<double>(S) * std::log(sigma_w2) - A / sigma_w2 + soft_entropy(Q);
}

/// Closed-form ELBO for a memory-polynomial channel (a-terms of a GmpModel):
/// same shape as the linear case, with the model mean built from per-symbol
/// moments of the basis x|x|^{p-1} and the variance from the per-symbol mixed
/// moments E{|x|^{p+q}} (terms sharing a lag are correlated; across lags the
/// factorized posterior makes them independent).
inline double elbo_mp(const std::vector<cplx>& y, const SoftQ& Q, const GmpModel& mp,
                      double sigma_w2, int sps, const Constellation& c) {
    if (sigma_w2 <= 0) throw std::invalid_argument("elbo_mp: sigma_w2 must be positive");
    if (!mp.b.empty() || !mp.c.empty())
        for (const auto& v : mp.b)
            if (v != cplx{0, 0}) throw std::invalid_argument("elbo_mp: model must be a-terms only");
    if (y.size() != Q.n * static_cast<std::size_t>(sps))
        throw std::invalid_argument("elbo_mp: y length must be sps * N");

    // flat list of (order p, lag l, coefficient)
    struct Term {
        int p, l;
        cplx coef;
    };
    std::vector<Term> terms;
    {
        std::size_t idx = 0;
        for (int p : mp.sets.p_a)
            for (int l : mp.sets.l_a.at(p)) terms.push_back({p, l, mp.a[idx++]});
    }
    const std::size_t P = terms.size();
    const std::size_t M = c.order();
    const std::ptrdiff_t S = static_cast<std::ptrdiff_t>(y.size());

    // per constellation point: basis values and |X|^p
    std::vector<std::vector<cplx>> basis(P, std::vector<cplx>(M));
    for (std::size_t t = 0; t < P; ++t)
        for (std::size_t mm = 0; mm < M; ++mm)
            basis[t][mm] = c.points[mm] * std::pow(std::abs(c.points[mm]), terms[t].p - 1);

    // per-symbol basis means mu_{t,k} and mixed second moments E{conj(b_t) b_u}
    std::vector<std::vector<cplx>> mu(P, std::vector<cplx>(Q.n, cplx{0, 0}));
    std::vector<std::vector<double>> mixed(P * P, std::vector<double>(Q.n, 0.0));
    for (std::size_t k = 0; k < Q.n; ++k)
        for (std::size_t mm = 0; mm < M; ++mm) {
            const double q = Q.at(k, mm);
            if (q == 0) continue;
            for (std::size_t t = 0; t < P; ++t) mu[t][k] += q * basis[t][mm];
            for (std::size_t t = 0; t < P; ++t)
                for (std::size_t u = 0; u < P; ++u)
                    mixed[t * P + u][k] +=
                        q * std::pow(std::abs(c.points[mm]), terms[t].p + terms[u].p);
        }

    // model mean y_hat_n = sum_t coef_t mu_t[n - l_t] on the zero-stuffed grid
    auto sym_at = [&](std::ptrdiff_t j) -> std::ptrdiff_t {
        if (j < 0 || j >= S || j % sps != 0) return -1;
        return j / sps;
    };
    double A = 0;
    for (std::ptrdiff_t n = 0; n < S; ++n) {
        cplx yhat{0, 0};
        for (std::size_t t = 0; t < P; ++t) {
            const std::ptrdiff_t k = sym_at(n - terms[t].l);
            if (k >= 0) yhat += terms[t].coef * mu[t][static_cast<std::size_t>(k)];
        }
        A += std::norm(y[static_cast<std::size_t>(n)] - yhat);
    }
    // variance: terms sharing a lag see the same symbol
    for (std::ptrdiff_t n = 0; n < S; ++n) {
        for (std::size_t t = 0; t < P; ++t)
            for (std::size_t u = 0; u < P; ++u) {
                if (terms[t].l != terms[u].l) continue;
                const std::ptrdiff_t k = sym_at(n - terms[t].l);
                if (k < 0) continue;
                const std::size_t ku = static_cast<std::size_t>(k);
                const cplx cov = mixed[t * P + u][ku] - std::conj(mu[t][ku]) * mu[u][ku];
                A += (std::conj(terms[t].coef) * terms[u].coef * cov).real();
            }
    }
    return -static_cast<double>(S) * std::log(sigma_w2) - A / sigma_w2 + soft_entropy(Q);
}

} // namespace blindeq

#endif
