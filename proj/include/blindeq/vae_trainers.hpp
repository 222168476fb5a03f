#ifndef BLINDEQ_VAE_TRAINERS_HPP
#define BLINDEQ_VAE_TRAINERS_HPP

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "blindeq/elbo.hpp"
#include "blindeq/trainers.hpp"

namespace blindeq {

namespace detail {

/// Gaussian soft demapper with trainable log variance; forward produces Q,
/// backward maps dL/dQ to gradients on the equalized symbols and on
/// log(sigma_d^2).
struct SoftmaxDemap {
    const Constellation* c = nullptr;
    double log_sd2 = 0;
    std::vector<cplx> x_tilde;
    SoftQ Q;

    void forward(const std::vector<cplx>& xt, const Constellation& cons, double lsd2) {
        c = &cons;
        log_sd2 = lsd2;
        x_tilde = xt;
        Q = vae_decoder_soft(xt, cons, std::exp(lsd2));
    }

    /// dldq is N x M row-major. Returns per-symbol complex-pair gradients and
    /// accumulates the scalar gradient for log sigma_d^2.
    std::vector<cplx> backward(const std::vector<double>& dldq, double& g_log_sd2) const {
        const double isd = std::exp(-log_sd2);
        std::vector<cplx> gx(Q.n, cplx{0, 0});
        for (std::size_t k = 0; k < Q.n; ++k) {
            double inner = 0;
            for (std::size_t m = 0; m < Q.m; ++m) inner += Q.at(k, m) * dldq[k * Q.m + m];
            for (std::size_t m = 0; m < Q.m; ++m) {
                const double dz = Q.at(k, m) * (dldq[k * Q.m + m] - inner);
                if (dz == 0) continue;
                const cplx diff = x_tilde[k] - c->points[m];
                gx[k] += dz * (-2.0 * isd) * diff;
                g_log_sd2 += dz * std::norm(diff) * isd; // dz/dlog_sd2 = -z
            }
        }
        return gx;
    }
};

} // namespace detail

// ---------------------------------------------------------------------------
// VAE with FIR decoder and linear-channel encoder (closed-form ELBO)
// ---------------------------------------------------------------------------

struct VaeFirConfig {
    int decoder_taps = 31;
    int encoder_taps = 25;
    double lr = 1e-3;
    double init_sigma_d2 = 0.1;
    double init_sigma_w2 = 0.1;
    int edge_trim = 16;
};

/// Trains decoder taps, soft-demap variance, channel taps and noise variance
/// by minimizing the negative closed-form ELBO of the linear AWGN model.
class VaeFirTrainer {
public:
    VaeFirTrainer(Constellation constellation, VaeFirConfig cfg)
        : c_(std::move(constellation)),
          cfg_(cfg),
          dec_(detail::dirac_taps("vae.dec", cfg.decoder_taps)),
          enc_(detail::dirac_taps("vae.enc", cfg.encoder_taps)),
          log_sd2_(ParamTensor::zeros("vae.log_sigma_d2", {1})),
          log_sw2_(ParamTensor::zeros("vae.log_sigma_w2", {1})) {
        log_sd2_.values[0] = std::log(cfg.init_sigma_d2);
        log_sw2_.values[0] = std::log(cfg.init_sigma_w2);
        for (auto* p : parameters()) opt_.push_back(AdamState::for_param(*p));
    }

    StepResult step(const TrainBatch& b) {
        StepResult r = forward_backward(b);
        std::size_t i = 0;
        for (auto* p : parameters()) adam_step(*p, opt_[i++], cfg_.lr);
        return r;
    }

    StepResult forward_backward(const TrainBatch& b) {
        for (auto* p : parameters()) p->zero_grad();
        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);
        const std::ptrdiff_t g = cfg_.edge_trim;
        const std::size_t M = c_.order();

        std::vector<cplx> xt = detail::fir_forward(b, dec_);
        last_x_tilde_ = xt;
        demap_.forward(xt, c_, log_sd2_.values[0]);
        const SoftQ& Q = demap_.Q;

        // per-symbol moments
        std::vector<cplx> u1(N, cplx{0, 0});
        std::vector<double> e2(N, 0.0);
        for (std::size_t k = 0; k < N; ++k)
            for (std::size_t m = 0; m < M; ++m) {
                u1[k] += Q.at(k, m) * c_.points[m];
                e2[k] += Q.at(k, m) * std::norm(c_.points[m]);
            }

        const std::ptrdiff_t Te = static_cast<std::ptrdiff_t>(enc_.size() / 2);
        const std::ptrdiff_t ce = (Te - 1) / 2;
        auto u1_at = [&](std::ptrdiff_t n) -> cplx {
            if (n < 0 || n >= S || (n % 2) != 0) return {0, 0};
            return u1[static_cast<std::size_t>(n / 2)];
        };
        auto var_at = [&](std::ptrdiff_t n) -> double {
            if (n < 0 || n >= S || (n % 2) != 0) return 0;
            const std::size_t k = static_cast<std::size_t>(n / 2);
            return e2[k] - std::norm(u1[k]);
        };

        const std::ptrdiff_t n_lo = 2 * g, n_hi = S - 2 * g;
        const double S_eff = static_cast<double>(n_hi - n_lo);
        const std::size_t k_lo = static_cast<std::size_t>(g), k_hi = N - static_cast<std::size_t>(g);

        std::vector<cplx> e(static_cast<std::size_t>(S), cplx{0, 0});
        double quad = 0;
        for (std::ptrdiff_t n = n_lo; n < n_hi; ++n) {
            cplx yh{0, 0};
            for (std::ptrdiff_t i = 0; i < Te; ++i)
                yh += enc_.as_complex(static_cast<std::size_t>(i)) * u1_at(n + ce - i);
            e[static_cast<std::size_t>(n)] = b.at(n) - yh;
            quad += std::norm(e[static_cast<std::size_t>(n)]);
        }
        std::vector<double> vsum(static_cast<std::size_t>(Te), 0.0);
        for (std::ptrdiff_t i = 0; i < Te; ++i)
            for (std::ptrdiff_t n = n_lo; n < n_hi; ++n)
                vsum[static_cast<std::size_t>(i)] += var_at(n + ce - i);
        double A = quad;
        for (std::ptrdiff_t i = 0; i < Te; ++i)
            A += std::norm(enc_.as_complex(static_cast<std::size_t>(i))) *
                 vsum[static_cast<std::size_t>(i)];

        double H = 0;
        for (std::size_t k = k_lo; k < k_hi; ++k)
            for (std::size_t m = 0; m < M; ++m) {
                const double q = Q.at(k, m);
                if (q > 0) H -= q * std::log(q);
            }

        const double sw = log_sw2_.values[0];
        const double isw = std::exp(-sw);
        StepResult r;
        r.recon = quad / S_eff;
        r.commit = 0;
        r.loss = S_eff * sw + A * isw - H;
        if (!std::isfinite(r.loss)) throw std::runtime_error("VaeFirTrainer: non-finite loss");

        // channel-tap and noise-variance gradients
        for (std::ptrdiff_t i = 0; i < Te; ++i) {
            cplx acc{0, 0};
            for (std::ptrdiff_t n = n_lo; n < n_hi; ++n)
                acc += e[static_cast<std::size_t>(n)] * std::conj(u1_at(n + ce - i));
            const cplx gh = isw * (-2.0 * acc + 2.0 * enc_.as_complex(static_cast<std::size_t>(i)) *
                                                    vsum[static_cast<std::size_t>(i)]);
            enc_.add_complex_grad(static_cast<std::size_t>(i), gh);
        }
        log_sw2_.grad[0] += S_eff - A * isw;

        // gradient with respect to Q
        std::vector<double> dldq(N * M, 0.0);
        std::vector<cplx> Ru(N, cplx{0, 0}); // d quad / d u1_k (complex pair)
        std::vector<double> Wk(N, 0.0);      // d V / d var_k
        for (std::size_t k = 0; k < N; ++k) {
            cplx acc{0, 0};
            double wk = 0;
            for (std::ptrdiff_t i = 0; i < Te; ++i) {
                const std::ptrdiff_t n = 2 * static_cast<std::ptrdiff_t>(k) - ce + i;
                if (n >= n_lo && n < n_hi) {
                    acc += e[static_cast<std::size_t>(n)] *
                           std::conj(enc_.as_complex(static_cast<std::size_t>(i)));
                    wk += std::norm(enc_.as_complex(static_cast<std::size_t>(i)));
                }
            }
            Ru[k] = -2.0 * acc;
            Wk[k] = wk;
        }
        for (std::size_t k = 0; k < N; ++k)
            for (std::size_t m = 0; m < M; ++m) {
                const cplx xm = c_.points[m];
                double dA = (std::conj(xm) * Ru[k]).real() +
                            Wk[k] * (std::norm(xm) - 2.0 * (std::conj(u1[k]) * xm).real());
                double v = isw * dA;
                if (k >= k_lo && k < k_hi) {
                    const double q = Q.at(k, m);
                    v += 1.0 + std::log(std::max(q, 1e-300));
                }
                dldq[k * M + m] = v;
            }

        std::vector<cplx> Gx = demap_.backward(dldq, log_sd2_.grad[0]);
        detail::fir_accumulate_grad(b, dec_, Gx);
        return r;
    }

    /// The exact objective as a pure function of the current parameters.
    double loss_only(const TrainBatch& b) const {
        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);
        const std::ptrdiff_t g = cfg_.edge_trim;
        const std::size_t M = c_.order();
        std::vector<cplx> xt = detail::fir_forward(b, dec_);
        SoftQ Q = vae_decoder_soft(xt, c_, std::exp(log_sd2_.values[0]));
        std::vector<cplx> u1(N, cplx{0, 0});
        std::vector<double> e2(N, 0.0);
        for (std::size_t k = 0; k < N; ++k)
            for (std::size_t m = 0; m < M; ++m) {
                u1[k] += Q.at(k, m) * c_.points[m];
                e2[k] += Q.at(k, m) * std::norm(c_.points[m]);
            }
        const std::ptrdiff_t Te = static_cast<std::ptrdiff_t>(enc_.size() / 2);
        const std::ptrdiff_t ce = (Te - 1) / 2;
        auto u1_at = [&](std::ptrdiff_t n) -> cplx {
            if (n < 0 || n >= S || (n % 2) != 0) return {0, 0};
            return u1[static_cast<std::size_t>(n / 2)];
        };
        auto var_at = [&](std::ptrdiff_t n) -> double {
            if (n < 0 || n >= S || (n % 2) != 0) return 0;
            const std::size_t k = static_cast<std::size_t>(n / 2);
            return e2[k] - std::norm(u1[k]);
        };
        const std::ptrdiff_t n_lo = 2 * g, n_hi = S - 2 * g;
        double A = 0;
        for (std::ptrdiff_t n = n_lo; n < n_hi; ++n) {
            cplx yh{0, 0};
            for (std::ptrdiff_t i = 0; i < Te; ++i)
                yh += enc_.as_complex(static_cast<std::size_t>(i)) * u1_at(n + ce - i);
            A += std::norm(b.at(n) - yh);
            for (std::ptrdiff_t i = 0; i < Te; ++i)
                A += std::norm(enc_.as_complex(static_cast<std::size_t>(i))) * var_at(n + ce - i);
        }
        double H = 0;
        for (std::size_t k = static_cast<std::size_t>(g); k < N - static_cast<std::size_t>(g); ++k)
            for (std::size_t m = 0; m < M; ++m) {
                const double q = Q.at(k, m);
                if (q > 0) H -= q * std::log(q);
            }
        const double sw = log_sw2_.values[0];
        return static_cast<double>(n_hi - n_lo) * sw + A * std::exp(-sw) - H;
    }

    std::vector<cplx> equalize(const ComplexSignal& frame) const {
        FirEqualizer eq;
        eq.taps.resize(dec_.size() / 2);
        for (std::size_t i = 0; i < eq.taps.size(); ++i) eq.taps[i] = dec_.as_complex(i);
        return equalize_fir(frame, eq);
    }

    std::vector<cplx> channel_estimate() const {
        std::vector<cplx> h(enc_.size() / 2);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = enc_.as_complex(i);
        return h;
    }
    double sigma_w2() const { return std::exp(log_sw2_.values[0]); }
    double sigma_d2() const { return std::exp(log_sd2_.values[0]); }
    const std::vector<cplx>& last_x_tilde() const { return last_x_tilde_; }
    std::vector<ParamTensor*> parameters() { return {&dec_, &enc_, &log_sd2_, &log_sw2_}; }

private:
    Constellation c_;
    VaeFirConfig cfg_;
    ParamTensor dec_, enc_, log_sd2_, log_sw2_;
    std::vector<AdamState> opt_;
    detail::SoftmaxDemap demap_;
    std::vector<cplx> last_x_tilde_;
};

// ---------------------------------------------------------------------------
// VAE with memory-polynomial decoder and encoder (closed-form ELBO)
// ---------------------------------------------------------------------------

struct VaeMpConfig {
    FeatureExtractorConfig decoder_features;
    std::vector<int> encoder_orders = {1, 3};
    int encoder_half_lags = 6;
    double lr = 1e-3;
    double init_sigma_d2 = 0.1;
    double init_sigma_w2 = 0.1;
    int edge_trim = 16;
};

class VaeMpTrainer {
public:
    VaeMpTrainer(Constellation constellation, VaeMpConfig cfg)
        : c_(std::move(constellation)), cfg_(cfg) {
        dec_ = ParamTensor::zeros("vae.dec", {cfg_.decoder_features.feature_length(), 2});
        dec_.set_complex(static_cast<std::size_t>(cfg_.decoder_features.center_feature_index()),
                         cplx{1, 0});
        for (std::size_t oi = 0; oi < cfg_.encoder_orders.size(); ++oi)
            for (int l = -cfg_.encoder_half_lags; l <= cfg_.encoder_half_lags; ++l)
                enc_terms_.push_back({oi, l});
        enc_ = ParamTensor::zeros("vae.enc", {enc_terms_.size(), 2});
        for (std::size_t t = 0; t < enc_terms_.size(); ++t)
            if (cfg_.encoder_orders[enc_terms_[t].oi] == 1 && enc_terms_[t].l == 0)
                enc_.set_complex(t, cplx{1, 0});
        log_sd2_ = ParamTensor::zeros("vae.log_sigma_d2", {1});
        log_sw2_ = ParamTensor::zeros("vae.log_sigma_w2", {1});
        log_sd2_.values[0] = std::log(cfg_.init_sigma_d2);
        log_sw2_.values[0] = std::log(cfg_.init_sigma_w2);
        for (auto* p : parameters()) opt_.push_back(AdamState::for_param(*p));
    }

    StepResult step(const TrainBatch& b) {
        StepResult r = forward_backward(b);
        std::size_t i = 0;
        for (auto* p : parameters()) adam_step(*p, opt_[i++], cfg_.lr);
        return r;
    }

    StepResult forward_backward(const TrainBatch& b) {
        for (auto* p : parameters()) p->zero_grad();
        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);
        const std::ptrdiff_t g = cfg_.edge_trim;
        const std::size_t M = c_.order();
        const std::size_t P = cfg_.encoder_orders.size();

        std::vector<std::vector<cplx>> feats(N);
        std::vector<cplx> xt(N);
        for (std::size_t k = 0; k < N; ++k) {
            feats[k] = decoder_features(b, static_cast<std::ptrdiff_t>(k));
            cplx acc{0, 0};
            for (std::size_t j = 0; j < feats[k].size(); ++j) acc += dec_.as_complex(j) * feats[k][j];
            xt[k] = acc;
        }
        last_x_tilde_ = xt;
        demap_.forward(xt, c_, log_sd2_.values[0]);
        const SoftQ& Q = demap_.Q;

        // constellation basis values and envelope powers per order
        std::vector<std::vector<cplx>> B(P, std::vector<cplx>(M));
        std::vector<std::vector<double>> T(P, std::vector<double>(M));
        for (std::size_t oi = 0; oi < P; ++oi) {
            const int p = cfg_.encoder_orders[oi];
            for (std::size_t m = 0; m < M; ++m) {
                const double a = std::abs(c_.points[m]);
                B[oi][m] = c_.points[m] * std::pow(a, p - 1);
                T[oi][m] = std::pow(a, p);
            }
        }
        // per-symbol moments
        std::vector<std::vector<cplx>> mu(P, std::vector<cplx>(N, cplx{0, 0}));
        std::vector<std::vector<double>> mix(P * P, std::vector<double>(N, 0.0));
        for (std::size_t k = 0; k < N; ++k)
            for (std::size_t m = 0; m < M; ++m) {
                const double q = Q.at(k, m);
                if (q == 0) continue;
                for (std::size_t oi = 0; oi < P; ++oi) mu[oi][k] += q * B[oi][m];
                for (std::size_t oi = 0; oi < P; ++oi)
                    for (std::size_t oj = 0; oj < P; ++oj)
                        mix[oi * P + oj][k] += q * T[oi][m] * T[oj][m];
            }
        auto mu_at = [&](std::size_t oi, std::ptrdiff_t n) -> cplx {
            if (n < 0 || n >= S || (n % 2) != 0) return {0, 0};
            return mu[oi][static_cast<std::size_t>(n / 2)];
        };

        const std::ptrdiff_t n_lo = 2 * g, n_hi = S - 2 * g;
        const double S_eff = static_cast<double>(n_hi - n_lo);
        const std::size_t k_lo = static_cast<std::size_t>(g), k_hi = N - static_cast<std::size_t>(g);

        std::vector<cplx> e(static_cast<std::size_t>(S), cplx{0, 0});
        double quad = 0;
        for (std::ptrdiff_t n = n_lo; n < n_hi; ++n) {
            cplx yh{0, 0};
            for (std::size_t t = 0; t < enc_terms_.size(); ++t)
                yh += enc_.as_complex(t) * mu_at(enc_terms_[t].oi, n - enc_terms_[t].l);
            e[static_cast<std::size_t>(n)] = b.at(n) - yh;
            quad += std::norm(e[static_cast<std::size_t>(n)]);
        }

        // variance part: group coefficients by lag
        const int hl = cfg_.encoder_half_lags;
        auto coeff = [&](std::size_t oi, int l) { return enc_.as_complex(oi * (2 * hl + 1) +
                                                                         static_cast<std::size_t>(l + hl)); };
        auto window_count = [&](std::size_t k, int l) -> bool {
            const std::ptrdiff_t n = 2 * static_cast<std::ptrdiff_t>(k) + l;
            return n >= n_lo && n < n_hi;
        };
        double V = 0;
        for (std::size_t k = 0; k < N; ++k) {
            for (int l = -hl; l <= hl; ++l) {
                if (!window_count(k, l)) continue;
                cplx mlk{0, 0};
                for (std::size_t oi = 0; oi < P; ++oi) mlk += coeff(oi, l) * mu[oi][k];
                double quad_m = 0;
                for (std::size_t oi = 0; oi < P; ++oi)
                    for (std::size_t oj = 0; oj < P; ++oj)
                        quad_m += (std::conj(coeff(oi, l)) * coeff(oj, l)).real() * mix[oi * P + oj][k];
                V += quad_m - std::norm(mlk);
            }
        }
        const double A = quad + V;

        double H = 0;
        for (std::size_t k = k_lo; k < k_hi; ++k)
            for (std::size_t m = 0; m < M; ++m) {
                const double q = Q.at(k, m);
                if (q > 0) H -= q * std::log(q);
            }

        const double sw = log_sw2_.values[0];
        const double isw = std::exp(-sw);
        StepResult r;
        r.recon = quad / S_eff;
        r.loss = S_eff * sw + A * isw - H;
        if (!std::isfinite(r.loss)) throw std::runtime_error("VaeMpTrainer: non-finite loss");

        // encoder gradients
        for (std::size_t t = 0; t < enc_terms_.size(); ++t) {
            const std::size_t oi = enc_terms_[t].oi;
            const int l = enc_terms_[t].l;
            cplx acc{0, 0};
            for (std::size_t k = 0; k < N; ++k) {
                const std::ptrdiff_t n = 2 * static_cast<std::ptrdiff_t>(k) + l;
                if (n >= n_lo && n < n_hi)
                    acc += e[static_cast<std::size_t>(n)] * std::conj(mu[oi][k]);
            }
            cplx gv{0, 0};
            for (std::size_t k = 0; k < N; ++k) {
                if (!window_count(k, l)) continue;
                cplx mc{0, 0};
                for (std::size_t oj = 0; oj < P; ++oj)
                    mc += coeff(oj, l) * mix[oi * P + oj][k];
                cplx mlk{0, 0};
                for (std::size_t oj = 0; oj < P; ++oj) mlk += coeff(oj, l) * mu[oj][k];
                gv += 2.0 * mc - 2.0 * std::conj(mu[oi][k]) * mlk;
            }
            enc_.add_complex_grad(t, isw * (-2.0 * acc + gv));
        }
        log_sw2_.grad[0] += S_eff - A * isw;

        // gradient with respect to Q
        std::vector<double> dldq(N * M, 0.0);
        for (std::size_t k = 0; k < N; ++k) {
            // mean-path accumulators per order
            std::vector<cplx> gmu(P, cplx{0, 0});
            for (std::size_t t = 0; t < enc_terms_.size(); ++t) {
                const std::ptrdiff_t n = 2 * static_cast<std::ptrdiff_t>(k) + enc_terms_[t].l;
                if (n >= n_lo && n < n_hi)
                    gmu[enc_terms_[t].oi] +=
                        std::conj(enc_.as_complex(t)) * (-2.0 * e[static_cast<std::size_t>(n)]);
            }
            for (std::size_t m = 0; m < M; ++m) {
                double dA = 0;
                for (std::size_t oi = 0; oi < P; ++oi)
                    dA += (std::conj(B[oi][m]) * gmu[oi]).real();
                for (int l = -hl; l <= hl; ++l) {
                    if (!window_count(k, l)) continue;
                    cplx phi{0, 0}, beta{0, 0}, mlk{0, 0};
                    for (std::size_t oi = 0; oi < P; ++oi) {
                        phi += coeff(oi, l) * T[oi][m];
                        beta += coeff(oi, l) * B[oi][m];
                        mlk += coeff(oi, l) * mu[oi][k];
                    }
                    dA += std::norm(phi) - 2.0 * (std::conj(mlk) * beta).real();
                }
                double v = isw * dA;
                if (k >= k_lo && k < k_hi) v += 1.0 + std::log(std::max(Q.at(k, m), 1e-300));
                dldq[k * M + m] = v;
            }
        }
        std::vector<cplx> Gx = demap_.backward(dldq, log_sd2_.grad[0]);
        for (std::size_t j = 0; j < dec_.size() / 2; ++j) {
            cplx acc{0, 0};
            for (std::size_t k = 0; k < N; ++k) acc += std::conj(feats[k][j]) * Gx[k];
            dec_.add_complex_grad(j, acc);
        }
        return r;
    }

    double loss_only(const TrainBatch& b) const {
        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t g = cfg_.edge_trim;
        const std::size_t M = c_.order();
        const std::size_t P = cfg_.encoder_orders.size();
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);

        std::vector<cplx> xt(N);
        for (std::size_t k = 0; k < N; ++k) {
            auto f = decoder_features(b, static_cast<std::ptrdiff_t>(k));
            cplx acc{0, 0};
            for (std::size_t j = 0; j < f.size(); ++j) acc += dec_.as_complex(j) * f[j];
            xt[k] = acc;
        }
        SoftQ Q = vae_decoder_soft(xt, c_, std::exp(log_sd2_.values[0]));

        std::vector<std::vector<cplx>> B(P, std::vector<cplx>(M));
        std::vector<std::vector<double>> T(P, std::vector<double>(M));
        for (std::size_t oi = 0; oi < P; ++oi) {
            const int p = cfg_.encoder_orders[oi];
            for (std::size_t m = 0; m < M; ++m) {
                const double a = std::abs(c_.points[m]);
                B[oi][m] = c_.points[m] * std::pow(a, p - 1);
                T[oi][m] = std::pow(a, p);
            }
        }
        std::vector<std::vector<cplx>> mu(P, std::vector<cplx>(N, cplx{0, 0}));
        std::vector<std::vector<double>> mix(P * P, std::vector<double>(N, 0.0));
        for (std::size_t k = 0; k < N; ++k)
            for (std::size_t m = 0; m < M; ++m) {
                const double q = Q.at(k, m);
                for (std::size_t oi = 0; oi < P; ++oi) mu[oi][k] += q * B[oi][m];
                for (std::size_t oi = 0; oi < P; ++oi)
                    for (std::size_t oj = 0; oj < P; ++oj)
                        mix[oi * P + oj][k] += q * T[oi][m] * T[oj][m];
            }
        auto mu_at = [&](std::size_t oi, std::ptrdiff_t n) -> cplx {
            if (n < 0 || n >= S || (n % 2) != 0) return {0, 0};
            return mu[oi][static_cast<std::size_t>(n / 2)];
        };
        const std::ptrdiff_t n_lo = 2 * g, n_hi = S - 2 * g;
        const int hl = cfg_.encoder_half_lags;
        auto coeff = [&](std::size_t oi, int l) {
            return enc_.as_complex(oi * (2 * hl + 1) + static_cast<std::size_t>(l + hl));
        };
        double A = 0;
        for (std::ptrdiff_t n = n_lo; n < n_hi; ++n) {
            cplx yh{0, 0};
            for (std::size_t t = 0; t < enc_terms_.size(); ++t)
                yh += enc_.as_complex(t) * mu_at(enc_terms_[t].oi, n - enc_terms_[t].l);
            A += std::norm(b.at(n) - yh);
        }
        for (std::size_t k = 0; k < N; ++k)
            for (int l = -hl; l <= hl; ++l) {
                const std::ptrdiff_t n = 2 * static_cast<std::ptrdiff_t>(k) + l;
                if (n < n_lo || n >= n_hi) continue;
                cplx mlk{0, 0};
                double quad_m = 0;
                for (std::size_t oi = 0; oi < P; ++oi) {
                    mlk += coeff(oi, l) * mu[oi][k];
                    for (std::size_t oj = 0; oj < P; ++oj)
                        quad_m += (std::conj(coeff(oi, l)) * coeff(oj, l)).real() * mix[oi * P + oj][k];
                }
                A += quad_m - std::norm(mlk);
            }
        double H = 0;
        for (std::size_t k = static_cast<std::size_t>(g); k < N - static_cast<std::size_t>(g); ++k)
            for (std::size_t m = 0; m < M; ++m) {
                const double q = Q.at(k, m);
                if (q > 0) H -= q * std::log(q);
            }
        const double sw = log_sw2_.values[0];
        return static_cast<double>(n_hi - n_lo) * sw + A * std::exp(-sw) - H;
    }

    std::vector<cplx> equalize(const ComplexSignal& frame) const {
        const std::ptrdiff_t n_sym = static_cast<std::ptrdiff_t>(frame.samples.size()) / 2;
        std::vector<cplx> out(static_cast<std::size_t>(n_sym));
        for (std::ptrdiff_t k = 0; k < n_sym; ++k) {
            auto f = extract_gmp_features(frame, cfg_.decoder_features, k);
            cplx acc{0, 0};
            for (std::size_t j = 0; j < f.size(); ++j) acc += dec_.as_complex(j) * f[j];
            out[static_cast<std::size_t>(k)] = acc;
        }
        return out;
    }

    GmpModel encoder_model() const {
        GmpIndexSets sets;
        sets.p_a = cfg_.encoder_orders;
        for (int p : cfg_.encoder_orders)
            for (int l = -cfg_.encoder_half_lags; l <= cfg_.encoder_half_lags; ++l)
                sets.l_a[p].push_back(l);
        GmpModel m = GmpModel::zero(sets);
        for (std::size_t t = 0; t < enc_terms_.size(); ++t) m.a[t] = enc_.as_complex(t);
        return m;
    }

    double sigma_w2() const { return std::exp(log_sw2_.values[0]); }
    const std::vector<cplx>& last_x_tilde() const { return last_x_tilde_; }
    std::vector<ParamTensor*> parameters() { return {&dec_, &enc_, &log_sd2_, &log_sw2_}; }

private:
    struct Term {
        std::size_t oi;
        int l;
    };
    std::vector<cplx> decoder_features(const TrainBatch& b, std::ptrdiff_t k) const {
        std::vector<cplx> s(cfg_.decoder_features.feature_length());
        const std::ptrdiff_t kappa = b.first_center + 2 * k;
        const auto& sets = cfg_.decoder_features.sets;
        const std::size_t na = sets.count_a(), nb = sets.count_b();
        detail::gmp_for_each(sets, [&](int kind, std::size_t idx, int p, int l, int m) {
            const std::size_t where = (kind == 0 ? idx : kind == 1 ? na + idx : na + nb + idx);
            s[where] = detail::gmp_basis_term(b.y->samples, kappa, kind, p, l, m);
        });
        return s;
    }

    Constellation c_;
    VaeMpConfig cfg_;
    ParamTensor dec_, enc_, log_sd2_, log_sw2_;
    std::vector<AdamState> opt_;
    std::vector<Term> enc_terms_;
    detail::SoftmaxDemap demap_;
    std::vector<cplx> last_x_tilde_;
};

} // namespace blindeq

#endif
