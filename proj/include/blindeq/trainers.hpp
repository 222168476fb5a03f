#ifndef BLINDEQ_TRAINERS_HPP
#define BLINDEQ_TRAINERS_HPP

#include <cmath>
#include <complex>
#include <optional>
#include <stdexcept>
#include <vector>

#include "blindeq/diff.hpp"
#include "blindeq/dsp.hpp"
#include "blindeq/equalizers.hpp"

namespace blindeq {

// ---------------------------------------------------------------------------
// Loss pieces shared by the VQ-VAE family
// ---------------------------------------------------------------------------

/// Dynamic balance weight: psi_{t+1} = recon / (recon + commit), evaluated at
/// step t; both losses zero keeps the previous value.
inline double psi_update(double recon_loss, double commit_loss, double psi_prev) {
    if (recon_loss < 0 || commit_loss < 0)
        throw std::invalid_argument("psi_update: losses must be nonnegative");
    if (recon_loss == 0 && commit_loss == 0) return psi_prev;
    return recon_loss / (recon_loss + commit_loss);
}

/// Reconstruction (mean per sample) plus rho times commitment (mean per
/// symbol).
inline double vqvae_loss(const std::vector<cplx>& y, const std::vector<cplx>& x_tilde,
                         const std::vector<cplx>& x_hat, const std::vector<cplx>& encoder_out,
                         double rho) {
    if (y.size() != encoder_out.size() || x_tilde.size() != x_hat.size())
        throw std::invalid_argument("vqvae_loss: shape mismatch");
    double recon = 0, commit = 0;
    for (std::size_t n = 0; n < y.size(); ++n) recon += std::norm(y[n] - encoder_out[n]);
    for (std::size_t k = 0; k < x_tilde.size(); ++k) commit += std::norm(x_tilde[k] - x_hat[k]);
    return recon / static_cast<double>(y.size()) +
           rho * commit / static_cast<double>(x_tilde.size());
}

enum class CommitWeighting { StaticRho, DynamicPsi };

struct StepResult {
    double loss = 0;      // weighted objective, including any regularizer
    double recon = 0;     // mean per-sample reconstruction error
    double commit = 0;    // mean per-symbol commitment error
};

/// A window of n_symbols training symbols inside a 2-SPS frame;
/// first_center is the sample index of symbol 0's center, so symbol k sits
/// at first_center + 2k. The frame provides natural margins for the decoder;
/// anything outside it reads as zero.
struct TrainBatch {
    const ComplexSignal* y = nullptr;
    std::ptrdiff_t first_center = 0;
    std::size_t n_symbols = 0;

    cplx at(std::ptrdiff_t rel) const {
        const std::ptrdiff_t i = first_center + rel;
        if (i < 0 || i >= static_cast<std::ptrdiff_t>(y->samples.size())) return {0, 0};
        return y->samples[static_cast<std::size_t>(i)];
    }
};

namespace detail {

/// x~_k = sum_i taps[i] * y[first_center + 2k + c - i]
inline std::vector<cplx> fir_forward(const TrainBatch& b, const ParamTensor& taps) {
    const std::ptrdiff_t T = static_cast<std::ptrdiff_t>(taps.size() / 2);
    const std::ptrdiff_t c = (T - 1) / 2;
    std::vector<cplx> out(b.n_symbols);
    for (std::size_t k = 0; k < b.n_symbols; ++k) {
        cplx acc{0, 0};
        for (std::ptrdiff_t i = 0; i < T; ++i)
            acc += taps.as_complex(static_cast<std::size_t>(i)) *
                   b.at(2 * static_cast<std::ptrdiff_t>(k) + c - i);
        out[k] = acc;
    }
    return out;
}

/// Accumulates G_taps[i] += sum_k conj(y_window) * D_k for the same indexing.
inline void fir_accumulate_grad(const TrainBatch& b, ParamTensor& taps,
                                const std::vector<cplx>& D) {
    const std::ptrdiff_t T = static_cast<std::ptrdiff_t>(taps.size() / 2);
    const std::ptrdiff_t c = (T - 1) / 2;
    for (std::ptrdiff_t i = 0; i < T; ++i) {
        cplx acc{0, 0};
        for (std::size_t k = 0; k < b.n_symbols; ++k)
            acc += std::conj(b.at(2 * static_cast<std::ptrdiff_t>(k) + c - i)) * D[k];
        taps.add_complex_grad(static_cast<std::size_t>(i), acc);
    }
}

inline ParamTensor dirac_taps(const std::string& name, int n_taps) {
    ParamTensor t = ParamTensor::zeros(name, {static_cast<std::size_t>(n_taps), 2});
    t.set_complex(static_cast<std::size_t>(n_taps / 2), cplx{1, 0});
    return t;
}

} // namespace detail

// ---------------------------------------------------------------------------
// VQ-VAE with FIR decoder and encoder (linear channel configuration)
// ---------------------------------------------------------------------------

struct VqVaeFirConfig {
    int decoder_taps = 31;
    int encoder_taps = 25;
    double lr = 1e-3;
    CommitWeighting weighting = CommitWeighting::StaticRho;
    double rho = 1.0;
    int edge_trim = 16; // symbols excluded per batch end from the losses
};

class VqVaeFirTrainer {
public:
    VqVaeFirTrainer(Constellation constellation, VqVaeFirConfig cfg)
        : c_(std::move(constellation)),
          cfg_(cfg),
          dec_(detail::dirac_taps("vqvae.dec", cfg.decoder_taps)),
          enc_(detail::dirac_taps("vqvae.enc", cfg.encoder_taps)),
          dec_opt_(AdamState::for_param(dec_)),
          enc_opt_(AdamState::for_param(enc_)) {}

    StepResult step(const TrainBatch& b) {
        StepResult r = forward_backward(b);
        adam_step(dec_, dec_opt_, cfg_.lr);
        adam_step(enc_, enc_opt_, cfg_.lr);
        if (cfg_.weighting == CommitWeighting::DynamicPsi)
            psi_ = psi_update(r.recon, r.commit, psi_);
        return r;
    }

    /// Populates gradients without updating; returns the loss breakdown.
    StepResult forward_backward(const TrainBatch& b) {
        dec_.zero_grad();
        enc_.zero_grad();

        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);
        const std::ptrdiff_t g = cfg_.edge_trim;
        if (static_cast<std::ptrdiff_t>(N) <= 2 * g)
            throw std::invalid_argument("VqVaeFirTrainer: batch smaller than the edge trim");

        std::vector<cplx> xt = detail::fir_forward(b, dec_);
        last_x_tilde_ = xt;
        std::vector<cplx> xh(N);
        for (std::size_t k = 0; k < N; ++k) xh[k] = c_.points[c_.nearest_index(xt[k])];
        last_x_hat_ = xh;

        // zero-stuffed decisions and encoder reconstruction
        std::vector<cplx> u(static_cast<std::size_t>(S), cplx{0, 0});
        for (std::size_t k = 0; k < N; ++k) u[2 * k] = xh[k];
        const std::ptrdiff_t Te = static_cast<std::ptrdiff_t>(enc_.size() / 2);
        const std::ptrdiff_t ce = (Te - 1) / 2;
        auto u_at = [&](std::ptrdiff_t i) -> cplx {
            return (i >= 0 && i < S) ? u[static_cast<std::size_t>(i)] : cplx{0, 0};
        };
        std::vector<cplx> yhat(static_cast<std::size_t>(S));
        for (std::ptrdiff_t n = 0; n < S; ++n) {
            cplx acc{0, 0};
            for (std::ptrdiff_t i = 0; i < Te; ++i)
                acc += enc_.as_complex(static_cast<std::size_t>(i)) * u_at(n + ce - i);
            yhat[static_cast<std::size_t>(n)] = acc;
        }

        const std::ptrdiff_t n_lo = 2 * g, n_hi = S - 2 * g;
        const double S_eff = static_cast<double>(n_hi - n_lo);
        const std::size_t k_lo = static_cast<std::size_t>(g), k_hi = N - static_cast<std::size_t>(g);
        const double N_eff = static_cast<double>(k_hi - k_lo);

        std::vector<cplx> e(static_cast<std::size_t>(S), cplx{0, 0});
        double recon = 0;
        for (std::ptrdiff_t n = n_lo; n < n_hi; ++n) {
            e[static_cast<std::size_t>(n)] = b.at(n) - yhat[static_cast<std::size_t>(n)];
            recon += std::norm(e[static_cast<std::size_t>(n)]);
        }
        recon /= S_eff;
        double commit = 0;
        for (std::size_t k = k_lo; k < k_hi; ++k) commit += std::norm(xt[k] - xh[k]);
        commit /= N_eff;

        const double wr = (cfg_.weighting == CommitWeighting::StaticRho) ? 1.0 : psi_;
        const double wc = (cfg_.weighting == CommitWeighting::StaticRho) ? cfg_.rho : 1.0 - psi_;

        StepResult r;
        r.recon = recon;
        r.commit = commit;
        r.loss = wr * recon + wc * commit;
        if (!std::isfinite(r.loss)) throw std::runtime_error("VqVaeFirTrainer: non-finite loss");

        // encoder gradient
        for (std::ptrdiff_t i = 0; i < Te; ++i) {
            cplx acc{0, 0};
            for (std::ptrdiff_t n = n_lo; n < n_hi; ++n)
                acc += e[static_cast<std::size_t>(n)] * std::conj(u_at(n + ce - i));
            enc_.add_complex_grad(static_cast<std::size_t>(i), -(2.0 * wr / S_eff) * acc);
        }

        // straight-through into the decoder output, plus the commitment pull
        std::vector<cplx> D(N, cplx{0, 0});
        for (std::size_t k = k_lo; k < k_hi; ++k) D[k] = (2.0 * wc / N_eff) * (xt[k] - xh[k]);
        for (std::size_t k = 0; k < N; ++k) {
            cplx acc{0, 0};
            for (std::ptrdiff_t i = 0; i < Te; ++i) {
                const std::ptrdiff_t n = 2 * static_cast<std::ptrdiff_t>(k) - ce + i;
                if (n >= n_lo && n < n_hi)
                    acc += e[static_cast<std::size_t>(n)] *
                           std::conj(enc_.as_complex(static_cast<std::size_t>(i)));
            }
            D[k] += -(2.0 * wr / S_eff) * acc;
        }
        detail::fir_accumulate_grad(b, dec_, D);
        return r;
    }

    /// Loss as a function of the current parameters under straight-through
    /// semantics: the encoder input follows x~ plus the frozen quantization
    /// residual, while the commitment target stays at the frozen decisions.
    /// The finite-difference oracle differentiates this.
    double surrogate_loss(const TrainBatch& b, const std::vector<cplx>& base_x_tilde,
                          const std::vector<cplx>& base_x_hat) const {
        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);
        const std::ptrdiff_t g = cfg_.edge_trim;
        std::vector<cplx> xt = detail::fir_forward(b, dec_);
        std::vector<cplx> xh(N);
        for (std::size_t k = 0; k < N; ++k) xh[k] = xt[k] + (base_x_hat[k] - base_x_tilde[k]);

        std::vector<cplx> u(static_cast<std::size_t>(S), cplx{0, 0});
        for (std::size_t k = 0; k < N; ++k) u[2 * k] = xh[k];
        const std::ptrdiff_t Te = static_cast<std::ptrdiff_t>(enc_.size() / 2);
        const std::ptrdiff_t ce = (Te - 1) / 2;
        auto u_at = [&](std::ptrdiff_t i) -> cplx {
            return (i >= 0 && i < S) ? u[static_cast<std::size_t>(i)] : cplx{0, 0};
        };
        double recon = 0, commit = 0;
        for (std::ptrdiff_t n = 2 * g; n < S - 2 * g; ++n) {
            cplx acc{0, 0};
            for (std::ptrdiff_t i = 0; i < Te; ++i)
                acc += enc_.as_complex(static_cast<std::size_t>(i)) * u_at(n + ce - i);
            recon += std::norm(b.at(n) - acc);
        }
        recon /= static_cast<double>(S - 4 * g);
        for (std::size_t k = static_cast<std::size_t>(g); k < N - static_cast<std::size_t>(g); ++k)
            commit += std::norm(xt[k] - base_x_hat[k]);
        commit /= static_cast<double>(N - 2 * static_cast<std::size_t>(g));
        const double wr = (cfg_.weighting == CommitWeighting::StaticRho) ? 1.0 : psi_;
        const double wc = (cfg_.weighting == CommitWeighting::StaticRho) ? cfg_.rho : 1.0 - psi_;
        return wr * recon + wc * commit;
    }

    std::vector<cplx> equalize(const ComplexSignal& frame) const {
        FirEqualizer eq;
        eq.taps.resize(dec_.size() / 2);
        for (std::size_t i = 0; i < eq.taps.size(); ++i) eq.taps[i] = dec_.as_complex(i);
        return equalize_fir(frame, eq);
    }

    double psi() const { return psi_; }
    const Constellation& constellation() const { return c_; }
    const std::vector<cplx>& last_x_tilde() const { return last_x_tilde_; }
    const std::vector<cplx>& last_x_hat() const { return last_x_hat_; }
    ParamTensor& decoder() { return dec_; }
    ParamTensor& encoder() { return enc_; }
    std::vector<ParamTensor*> parameters() { return {&dec_, &enc_}; }
    std::vector<const ParamTensor*> parameters() const { return {&dec_, &enc_}; }

private:
    Constellation c_;
    VqVaeFirConfig cfg_;
    ParamTensor dec_, enc_;
    AdamState dec_opt_, enc_opt_;
    double psi_ = 0.5;
    std::vector<cplx> last_x_tilde_, last_x_hat_;
};

// ---------------------------------------------------------------------------
// VQ-VAE with NN decoder (GMP features) and NN encoder (decision window)
// ---------------------------------------------------------------------------

struct VqVaeNnConfig {
    FeatureExtractorConfig features;
    std::vector<int> decoder_hidden = {32, 8};
    std::vector<int> encoder_hidden = {64, 32};
    int encoder_window = 31; // complex decision samples per reconstructed sample
    double lr = 1e-3;
    CommitWeighting weighting = CommitWeighting::StaticRho;
    double rho = 1.0;
    double l2_weight = 0.0;
    int edge_trim = 16;
};

class VqVaeNnTrainer {
public:
    VqVaeNnTrainer(Constellation constellation, VqVaeNnConfig cfg, SeededRng& rng)
        : c_(std::move(constellation)), cfg_(cfg) {
        dec_spec_.layer_widths.push_back(static_cast<int>(2 * cfg_.features.feature_length()));
        for (int w : cfg_.decoder_hidden) dec_spec_.layer_widths.push_back(w);
        dec_spec_.layer_widths.push_back(2);
        dec_spec_.residual_input_to_output = true;
        dec_spec_.residual_input_index = static_cast<int>(2 * cfg_.features.center_feature_index());

        enc_spec_.layer_widths.push_back(2 * cfg_.encoder_window);
        for (int w : cfg_.encoder_hidden) enc_spec_.layer_widths.push_back(w);
        enc_spec_.layer_widths.push_back(2);

        dec_ = mlp_init(dec_spec_, rng, "vqvae.dec");
        enc_ = mlp_init(enc_spec_, rng, "vqvae.enc");
        for (auto* p : dec_.all()) opt_.push_back(AdamState::for_param(*p));
        for (auto* p : enc_.all()) opt_.push_back(AdamState::for_param(*p));
    }

    StepResult step(const TrainBatch& b) {
        StepResult r = forward_backward(b);
        std::size_t i = 0;
        for (auto* p : dec_.all()) adam_step(*p, opt_[i++], cfg_.lr);
        for (auto* p : enc_.all()) adam_step(*p, opt_[i++], cfg_.lr);
        if (cfg_.weighting == CommitWeighting::DynamicPsi)
            psi_ = psi_update(r.recon, r.commit, psi_);
        return r;
    }

    StepResult forward_backward(const TrainBatch& b) {
        dec_.zero_grad();
        enc_.zero_grad();

        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);
        const std::ptrdiff_t g = cfg_.edge_trim;
        if (static_cast<std::ptrdiff_t>(N) <= 2 * g)
            throw std::invalid_argument("VqVaeNnTrainer: batch smaller than the edge trim");

        // decoder forward over the feature windows
        std::vector<std::vector<double>> feats(N);
        std::vector<cplx> xt(N);
        {
            std::vector<double> o;
            for (std::size_t k = 0; k < N; ++k) {
                feats[k] = features_to_real(batch_features(b, static_cast<std::ptrdiff_t>(k)));
                mlp_forward(dec_spec_, dec_, feats[k], o);
                xt[k] = {o[0], o[1]};
            }
        }
        last_x_tilde_ = xt;
        std::vector<cplx> xh(N);
        for (std::size_t k = 0; k < N; ++k) xh[k] = c_.points[c_.nearest_index(xt[k])];
        last_x_hat_ = xh;

        std::vector<cplx> u(static_cast<std::size_t>(S), cplx{0, 0});
        for (std::size_t k = 0; k < N; ++k) u[2 * k] = xh[k];

        // encoder forward per reconstructed sample
        const int W = cfg_.encoder_window;
        const int hw = (W - 1) / 2;
        auto encoder_input = [&](std::ptrdiff_t n, std::vector<double>& in) {
            in.resize(static_cast<std::size_t>(2 * W));
            for (int j = 0; j < W; ++j) {
                const std::ptrdiff_t idx = n - hw + j;
                const cplx v =
                    (idx >= 0 && idx < S) ? u[static_cast<std::size_t>(idx)] : cplx{0, 0};
                in[static_cast<std::size_t>(2 * j)] = v.real();
                in[static_cast<std::size_t>(2 * j) + 1] = v.imag();
            }
        };
        std::vector<cplx> yhat(static_cast<std::size_t>(S));
        {
            std::vector<double> in, o;
            for (std::ptrdiff_t n = 0; n < S; ++n) {
                encoder_input(n, in);
                mlp_forward(enc_spec_, enc_, in, o);
                yhat[static_cast<std::size_t>(n)] = {o[0], o[1]};
            }
        }

        const std::ptrdiff_t n_lo = 2 * g, n_hi = S - 2 * g;
        const double S_eff = static_cast<double>(n_hi - n_lo);
        const std::size_t k_lo = static_cast<std::size_t>(g), k_hi = N - static_cast<std::size_t>(g);
        const double N_eff = static_cast<double>(k_hi - k_lo);

        double recon = 0, commit = 0;
        std::vector<cplx> e(static_cast<std::size_t>(S), cplx{0, 0});
        for (std::ptrdiff_t n = n_lo; n < n_hi; ++n) {
            e[static_cast<std::size_t>(n)] = b.at(n) - yhat[static_cast<std::size_t>(n)];
            recon += std::norm(e[static_cast<std::size_t>(n)]);
        }
        recon /= S_eff;
        for (std::size_t k = k_lo; k < k_hi; ++k) commit += std::norm(xt[k] - xh[k]);
        commit /= N_eff;

        const double wr = (cfg_.weighting == CommitWeighting::StaticRho) ? 1.0 : psi_;
        const double wc = (cfg_.weighting == CommitWeighting::StaticRho) ? cfg_.rho : 1.0 - psi_;

        StepResult r;
        r.recon = recon;
        r.commit = commit;
        r.loss = wr * recon + wc * commit;
        if (!std::isfinite(r.loss)) throw std::runtime_error("VqVaeNnTrainer: non-finite loss");

        // encoder backward: masked reconstruction error into decision gradients
        std::vector<cplx> Gxh(N, cplx{0, 0});
        {
            std::vector<double> in, o, og(2), ig;
            MlpTape tape;
            for (std::ptrdiff_t n = n_lo; n < n_hi; ++n) {
                const cplx ge = -(2.0 * wr / S_eff) * e[static_cast<std::size_t>(n)];
                if (ge == cplx{0, 0}) continue;
                encoder_input(n, in);
                mlp_forward(enc_spec_, enc_, in, o, &tape);
                og[0] = ge.real();
                og[1] = ge.imag();
                mlp_backward(enc_spec_, enc_, tape, og, &ig);
                for (int j = 0; j < W; ++j) {
                    const std::ptrdiff_t idx = n - hw + j;
                    if (idx < 0 || idx >= S || (idx % 2) != 0) continue;
                    const std::size_t k = static_cast<std::size_t>(idx / 2);
                    Gxh[k] += cplx{ig[static_cast<std::size_t>(2 * j)],
                                   ig[static_cast<std::size_t>(2 * j) + 1]};
                }
            }
        }

        // decoder backward: commitment pull plus the straight-through copy
        {
            std::vector<double> o, og(2);
            MlpTape tape;
            for (std::size_t k = 0; k < N; ++k) {
                cplx D = Gxh[k];
                if (k >= k_lo && k < k_hi) D += (2.0 * wc / N_eff) * (xt[k] - xh[k]);
                if (D == cplx{0, 0}) continue;
                mlp_forward(dec_spec_, dec_, feats[k], o, &tape);
                og[0] = D.real();
                og[1] = D.imag();
                mlp_backward(dec_spec_, dec_, tape, og);
            }
        }

        if (cfg_.l2_weight > 0) r.loss += l2_penalty(regularized_weights(), cfg_.l2_weight, true);
        return r;
    }

    /// Straight-through surrogate objective: encoder input tracks x~ plus the
    /// frozen residual, commitment target stays at the frozen decisions.
    double surrogate_loss(const TrainBatch& b, const std::vector<cplx>& base_x_tilde,
                          const std::vector<cplx>& base_x_hat) {
        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);
        const std::ptrdiff_t g = cfg_.edge_trim;
        std::vector<cplx> xt(N), xh(N);
        std::vector<double> o;
        for (std::size_t k = 0; k < N; ++k) {
            auto f = features_to_real(batch_features(b, static_cast<std::ptrdiff_t>(k)));
            mlp_forward(dec_spec_, dec_, f, o);
            xt[k] = {o[0], o[1]};
            xh[k] = xt[k] + (base_x_hat[k] - base_x_tilde[k]);
        }
        std::vector<cplx> u(static_cast<std::size_t>(S), cplx{0, 0});
        for (std::size_t k = 0; k < N; ++k) u[2 * k] = xh[k];
        const int W = cfg_.encoder_window;
        const int hw = (W - 1) / 2;
        double recon = 0, commit = 0;
        std::vector<double> in(static_cast<std::size_t>(2 * W));
        for (std::ptrdiff_t n = 2 * g; n < S - 2 * g; ++n) {
            for (int j = 0; j < W; ++j) {
                const std::ptrdiff_t idx = n - hw + j;
                const cplx v =
                    (idx >= 0 && idx < S) ? u[static_cast<std::size_t>(idx)] : cplx{0, 0};
                in[static_cast<std::size_t>(2 * j)] = v.real();
                in[static_cast<std::size_t>(2 * j) + 1] = v.imag();
            }
            mlp_forward(enc_spec_, enc_, in, o);
            recon += std::norm(b.at(n) - cplx{o[0], o[1]});
        }
        recon /= static_cast<double>(S - 4 * g);
        for (std::size_t k = static_cast<std::size_t>(g); k < N - static_cast<std::size_t>(g); ++k)
            commit += std::norm(xt[k] - base_x_hat[k]);
        commit /= static_cast<double>(N - 2 * static_cast<std::size_t>(g));
        const double wr = (cfg_.weighting == CommitWeighting::StaticRho) ? 1.0 : psi_;
        const double wc = (cfg_.weighting == CommitWeighting::StaticRho) ? cfg_.rho : 1.0 - psi_;
        double total = wr * recon + wc * commit;
        total += l2_penalty(regularized_weights(), cfg_.l2_weight, false);
        return total;
    }

    std::vector<cplx> equalize(const ComplexSignal& frame) const {
        return equalize_nn(frame, cfg_.features, dec_spec_, dec_);
    }

    std::vector<ParamTensor*> parameters() {
        auto v = dec_.all();
        for (auto* p : enc_.all()) v.push_back(p);
        return v;
    }
    std::vector<ParamTensor*> regularized_weights() {
        std::vector<ParamTensor*> v;
        for (std::size_t l = 0; l + 1 < dec_.weights.size(); ++l) v.push_back(&dec_.weights[l]);
        return v;
    }
    double psi() const { return psi_; }
    const std::vector<cplx>& last_x_tilde() const { return last_x_tilde_; }
    MlpParams& decoder_params() { return dec_; }
    MlpParams& encoder_params() { return enc_; }

private:
    std::vector<cplx> batch_features(const TrainBatch& b, std::ptrdiff_t k) const {
        // features around the absolute center of symbol k within the frame
        std::vector<cplx> s(cfg_.features.feature_length());
        const std::ptrdiff_t kappa = b.first_center + 2 * k;
        const std::size_t na = cfg_.features.sets.count_a(), nb = cfg_.features.sets.count_b();
        detail::gmp_for_each(cfg_.features.sets, [&](int kind, std::size_t idx, int p, int l, int m) {
            const std::size_t where = (kind == 0 ? idx : kind == 1 ? na + idx : na + nb + idx);
            s[where] = detail::gmp_basis_term(b.y->samples, kappa, kind, p, l, m);
        });
        return s;
    }

    Constellation c_;
    VqVaeNnConfig cfg_;
    MlpSpec dec_spec_, enc_spec_;
    MlpParams dec_, enc_;
    std::vector<AdamState> opt_;
    double psi_ = 0.5;
    std::vector<cplx> last_x_tilde_, last_x_hat_;
};

// ---------------------------------------------------------------------------
// VQ-VAE with memory-polynomial decoder and encoder
// ---------------------------------------------------------------------------

struct VqVaeMpConfig {
    FeatureExtractorConfig decoder_features; // a-terms over the observation
    std::vector<int> encoder_orders = {1, 3};
    int encoder_half_lags = 6; // lags -h..h over the zero-stuffed decisions
    double lr = 1e-3;
    CommitWeighting weighting = CommitWeighting::StaticRho;
    double rho = 1.0;
    int edge_trim = 16;
};

/// Decoder: linear map over the GMP features of y. Encoder: memory polynomial
/// over the zero-stuffed decisions.
class VqVaeMpTrainer {
public:
    VqVaeMpTrainer(Constellation constellation, VqVaeMpConfig cfg)
        : c_(std::move(constellation)), cfg_(cfg) {
        dec_ = ParamTensor::zeros("vqvae.dec", {cfg_.decoder_features.feature_length(), 2});
        dec_.set_complex(static_cast<std::size_t>(cfg_.decoder_features.center_feature_index()),
                         cplx{1, 0});
        for (int p : cfg_.encoder_orders)
            for (int l = -cfg_.encoder_half_lags; l <= cfg_.encoder_half_lags; ++l)
                enc_terms_.push_back({p, l});
        enc_ = ParamTensor::zeros("vqvae.enc", {enc_terms_.size(), 2});
        for (std::size_t t = 0; t < enc_terms_.size(); ++t)
            if (enc_terms_[t].p == 1 && enc_terms_[t].l == 0) enc_.set_complex(t, cplx{1, 0});
        dec_opt_ = AdamState::for_param(dec_);
        enc_opt_ = AdamState::for_param(enc_);
    }

    StepResult step(const TrainBatch& b) {
        StepResult r = forward_backward(b);
        adam_step(dec_, dec_opt_, cfg_.lr);
        adam_step(enc_, enc_opt_, cfg_.lr);
        if (cfg_.weighting == CommitWeighting::DynamicPsi)
            psi_ = psi_update(r.recon, r.commit, psi_);
        return r;
    }

    StepResult forward_backward(const TrainBatch& b) {
        dec_.zero_grad();
        enc_.zero_grad();
        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);
        const std::ptrdiff_t g = cfg_.edge_trim;

        std::vector<std::vector<cplx>> feats(N);
        std::vector<cplx> xt(N);
        for (std::size_t k = 0; k < N; ++k) {
            feats[k] = batch_features(b, static_cast<std::ptrdiff_t>(k));
            cplx acc{0, 0};
            for (std::size_t j = 0; j < feats[k].size(); ++j)
                acc += dec_.as_complex(j) * feats[k][j];
            xt[k] = acc;
        }
        last_x_tilde_ = xt;
        std::vector<cplx> xh(N);
        for (std::size_t k = 0; k < N; ++k) xh[k] = c_.points[c_.nearest_index(xt[k])];

        std::vector<cplx> u(static_cast<std::size_t>(S), cplx{0, 0});
        for (std::size_t k = 0; k < N; ++k) u[2 * k] = xh[k];

        // basis sequences per order over the zero-stuffed decisions
        std::vector<std::vector<cplx>> basis(enc_orders_count(), std::vector<cplx>(static_cast<std::size_t>(S)));
        for (std::size_t oi = 0; oi < enc_orders_count(); ++oi) {
            const int p = cfg_.encoder_orders[oi];
            for (std::ptrdiff_t n = 0; n < S; ++n) {
                const cplx v = u[static_cast<std::size_t>(n)];
                basis[oi][static_cast<std::size_t>(n)] =
                    (p == 1) ? v : v * std::pow(std::abs(v), p - 1);
            }
        }
        auto basis_at = [&](std::size_t oi, std::ptrdiff_t n) -> cplx {
            return (n >= 0 && n < S) ? basis[oi][static_cast<std::size_t>(n)] : cplx{0, 0};
        };

        std::vector<cplx> yhat(static_cast<std::size_t>(S), cplx{0, 0});
        for (std::ptrdiff_t n = 0; n < S; ++n) {
            cplx acc{0, 0};
            for (std::size_t t = 0; t < enc_terms_.size(); ++t)
                acc += enc_.as_complex(t) * basis_at(order_index(enc_terms_[t].p), n - enc_terms_[t].l);
            yhat[static_cast<std::size_t>(n)] = acc;
        }

        const std::ptrdiff_t n_lo = 2 * g, n_hi = S - 2 * g;
        const double S_eff = static_cast<double>(n_hi - n_lo);
        const std::size_t k_lo = static_cast<std::size_t>(g), k_hi = N - static_cast<std::size_t>(g);
        const double N_eff = static_cast<double>(k_hi - k_lo);

        std::vector<cplx> e(static_cast<std::size_t>(S), cplx{0, 0});
        double recon = 0, commit = 0;
        for (std::ptrdiff_t n = n_lo; n < n_hi; ++n) {
            e[static_cast<std::size_t>(n)] = b.at(n) - yhat[static_cast<std::size_t>(n)];
            recon += std::norm(e[static_cast<std::size_t>(n)]);
        }
        recon /= S_eff;
        for (std::size_t k = k_lo; k < k_hi; ++k) commit += std::norm(xt[k] - xh[k]);
        commit /= N_eff;
        const double wr = (cfg_.weighting == CommitWeighting::StaticRho) ? 1.0 : psi_;
        const double wc = (cfg_.weighting == CommitWeighting::StaticRho) ? cfg_.rho : 1.0 - psi_;

        StepResult r;
        r.recon = recon;
        r.commit = commit;
        r.loss = wr * recon + wc * commit;
        if (!std::isfinite(r.loss)) throw std::runtime_error("VqVaeMpTrainer: non-finite loss");

        // encoder coefficient gradients
        for (std::size_t t = 0; t < enc_terms_.size(); ++t) {
            cplx acc{0, 0};
            const std::size_t oi = order_index(enc_terms_[t].p);
            for (std::ptrdiff_t n = n_lo; n < n_hi; ++n)
                acc += e[static_cast<std::size_t>(n)] *
                       std::conj(basis_at(oi, n - enc_terms_[t].l));
            enc_.add_complex_grad(t, -(2.0 * wr / S_eff) * acc);
        }

        // gradients into the decisions through the polynomial basis
        std::vector<cplx> D(N, cplx{0, 0});
        for (std::size_t k = k_lo; k < k_hi; ++k) D[k] = (2.0 * wc / N_eff) * (xt[k] - xh[k]);
        for (std::size_t k = 0; k < N; ++k) {
            const std::ptrdiff_t j = 2 * static_cast<std::ptrdiff_t>(k);
            const cplx z = u[static_cast<std::size_t>(j)];
            const double az = std::abs(z);
            cplx Gz{0, 0};
            for (std::size_t oi = 0; oi < enc_orders_count(); ++oi) {
                const int p = cfg_.encoder_orders[oi];
                // G for the basis value b_p(u_j)
                cplx Gb{0, 0};
                for (std::size_t t = 0; t < enc_terms_.size(); ++t) {
                    if (order_index(enc_terms_[t].p) != oi) continue;
                    const std::ptrdiff_t n = j + enc_terms_[t].l;
                    if (n >= n_lo && n < n_hi)
                        Gb += std::conj(enc_.as_complex(t)) *
                              (-(2.0 * wr / S_eff) * e[static_cast<std::size_t>(n)]);
                }
                if (Gb == cplx{0, 0}) continue;
                const int ee = p - 1;
                if (ee == 0) {
                    Gz += Gb;
                } else if (az > 0) {
                    const double d_dz = (1.0 + ee / 2.0) * std::pow(az, ee);
                    const cplx d_dzbar = (ee / 2.0) * z * z * std::pow(az, ee - 2);
                    Gz += std::conj(Gb) * d_dzbar + Gb * d_dz;
                }
            }
            D[k] += Gz;
        }
        for (std::size_t jf = 0; jf < dec_.size() / 2; ++jf) {
            cplx acc{0, 0};
            for (std::size_t k = 0; k < N; ++k) acc += std::conj(feats[k][jf]) * D[k];
            dec_.add_complex_grad(jf, acc);
        }
        return r;
    }

    double surrogate_loss(const TrainBatch& b, const std::vector<cplx>& base_x_tilde,
                          const std::vector<cplx>& base_x_hat) const {
        const std::size_t N = b.n_symbols;
        const std::ptrdiff_t S = 2 * static_cast<std::ptrdiff_t>(N);
        const std::ptrdiff_t g = cfg_.edge_trim;
        std::vector<cplx> xt(N), xh(N);
        for (std::size_t k = 0; k < N; ++k) {
            auto f = batch_features(b, static_cast<std::ptrdiff_t>(k));
            cplx acc{0, 0};
            for (std::size_t j = 0; j < f.size(); ++j) acc += dec_.as_complex(j) * f[j];
            xt[k] = acc;
            xh[k] = xt[k] + (base_x_hat[k] - base_x_tilde[k]);
        }
        std::vector<cplx> u(static_cast<std::size_t>(S), cplx{0, 0});
        for (std::size_t k = 0; k < N; ++k) u[2 * k] = xh[k];
        auto basis_at = [&](int p, std::ptrdiff_t n) -> cplx {
            if (n < 0 || n >= S) return {0, 0};
            const cplx v = u[static_cast<std::size_t>(n)];
            return (p == 1) ? v : v * std::pow(std::abs(v), p - 1);
        };
        double recon = 0, commit = 0;
        for (std::ptrdiff_t n = 2 * g; n < S - 2 * g; ++n) {
            cplx acc{0, 0};
            for (std::size_t t = 0; t < enc_terms_.size(); ++t)
                acc += enc_.as_complex(t) * basis_at(enc_terms_[t].p, n - enc_terms_[t].l);
            recon += std::norm(b.at(n) - acc);
        }
        recon /= static_cast<double>(S - 4 * g);
        for (std::size_t k = static_cast<std::size_t>(g); k < N - static_cast<std::size_t>(g); ++k)
            commit += std::norm(xt[k] - base_x_hat[k]);
        commit /= static_cast<double>(N - 2 * static_cast<std::size_t>(g));
        const double wr = (cfg_.weighting == CommitWeighting::StaticRho) ? 1.0 : psi_;
        const double wc = (cfg_.weighting == CommitWeighting::StaticRho) ? cfg_.rho : 1.0 - psi_;
        return wr * recon + wc * commit;
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

    /// Converged encoder coefficients as a GmpModel (channel-estimate export).
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

    double psi() const { return psi_; }
    const std::vector<cplx>& last_x_tilde() const { return last_x_tilde_; }
    std::vector<ParamTensor*> parameters() { return {&dec_, &enc_}; }

private:
    struct Term {
        int p, l;
    };
    std::size_t enc_orders_count() const { return cfg_.encoder_orders.size(); }
    std::size_t order_index(int p) const {
        for (std::size_t i = 0; i < cfg_.encoder_orders.size(); ++i)
            if (cfg_.encoder_orders[i] == p) return i;
        throw std::logic_error("VqVaeMpTrainer: unknown order");
    }
    std::vector<cplx> batch_features(const TrainBatch& b, std::ptrdiff_t k) const {
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
    VqVaeMpConfig cfg_;
    ParamTensor dec_, enc_;
    AdamState dec_opt_, enc_opt_;
    std::vector<Term> enc_terms_;
    double psi_ = 0.5;
    std::vector<cplx> last_x_tilde_;
};

// ---------------------------------------------------------------------------
// CMA (per-symbol) and CMA-batch
// ---------------------------------------------------------------------------

struct CmaState {
    std::vector<cplx> taps;
    double r2 = 1.0;
    double mu0 = 1e-3;
    std::size_t halve_every = 1 << 14; // processed symbols per halving
    std::size_t processed = 0;

    static CmaState dirac(int n_taps, const Constellation& c, double mu0 = 1e-3) {
        CmaState s;
        s.taps.assign(static_cast<std::size_t>(n_taps), cplx{0, 0});
        s.taps[static_cast<std::size_t>(n_taps / 2)] = cplx{1, 0};
        s.r2 = c.cma_r2();
        s.mu0 = mu0;
        return s;
    }

    double current_mu() const {
        return mu0 * std::pow(0.5, static_cast<double>(processed / halve_every));
    }
};

/// One constant-modulus update: z = sum_i taps[i] window[i];
/// taps += mu (r2 - |z|^2) z conj(window).
inline cplx cma_step(CmaState& s, const std::vector<cplx>& window, double mu) {
    cplx z{0, 0};
    for (std::size_t i = 0; i < s.taps.size(); ++i) z += s.taps[i] * window[i];
    const double err = s.r2 - std::norm(z);
    for (std::size_t i = 0; i < s.taps.size(); ++i)
        s.taps[i] += mu * err * z * std::conj(window[i]);
    ++s.processed;
    return z;
}

/// Runs the per-symbol CMA over a 2-SPS frame with the geometric step decay.
inline void cma_run(CmaState& s, const ComplexSignal& y) {
    const std::ptrdiff_t T = static_cast<std::ptrdiff_t>(s.taps.size());
    const std::ptrdiff_t c = (T - 1) / 2;
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(y.samples.size());
    std::vector<cplx> window(s.taps.size());
    for (std::ptrdiff_t k = 0; k < n / 2; ++k) {
        const std::ptrdiff_t base = 2 * k + c;
        for (std::ptrdiff_t i = 0; i < T; ++i) {
            const std::ptrdiff_t j = base - i;
            window[static_cast<std::size_t>(i)] =
                (j >= 0 && j < n) ? y.samples[static_cast<std::size_t>(j)] : cplx{0, 0};
        }
        cma_step(s, window, s.current_mu());
    }
}

/// Batch blind equalizer minimizing mean (|x~|^2 - r2)^2 with Adam.
class CmaBatchTrainer {
public:
    CmaBatchTrainer(Constellation c, int n_taps, double lr)
        : c_(std::move(c)),
          lr_(lr),
          taps_(detail::dirac_taps("cma_batch.taps", n_taps)),
          opt_(AdamState::for_param(taps_)),
          r2_(c_.cma_r2()) {}

    StepResult step(const TrainBatch& b) {
        StepResult r = forward_backward(b);
        adam_step(taps_, opt_, lr_);
        return r;
    }

    StepResult forward_backward(const TrainBatch& b) {
        taps_.zero_grad();
        std::vector<cplx> xt = detail::fir_forward(b, taps_);
        const double N = static_cast<double>(xt.size());
        double loss = 0;
        std::vector<cplx> D(xt.size());
        for (std::size_t k = 0; k < xt.size(); ++k) {
            const double dev = std::norm(xt[k]) - r2_;
            loss += dev * dev;
            D[k] = (4.0 / N) * dev * xt[k];
        }
        detail::fir_accumulate_grad(b, taps_, D);
        StepResult r;
        r.loss = loss / N;
        if (!std::isfinite(r.loss)) throw std::runtime_error("CmaBatchTrainer: non-finite loss");
        return r;
    }

    double loss_only(const TrainBatch& b) const {
        std::vector<cplx> xt = detail::fir_forward(b, taps_);
        double loss = 0;
        for (auto v : xt) {
            const double dev = std::norm(v) - r2_;
            loss += dev * dev;
        }
        return loss / static_cast<double>(xt.size());
    }

    std::vector<cplx> equalize(const ComplexSignal& frame) const {
        FirEqualizer eq;
        eq.taps.resize(taps_.size() / 2);
        for (std::size_t i = 0; i < eq.taps.size(); ++i) eq.taps[i] = taps_.as_complex(i);
        return equalize_fir(frame, eq);
    }

    ParamTensor& taps() { return taps_; }

private:
    Constellation c_;
    double lr_;
    ParamTensor taps_;
    AdamState opt_;
    double r2_;
};

// ---------------------------------------------------------------------------
// Data-aided FFE (MMSE criterion) and decision-directed LMS
// ---------------------------------------------------------------------------

class FfeMmseTrainer {
public:
    FfeMmseTrainer(int n_taps, double lr)
        : lr_(lr), taps_(detail::dirac_taps("ffe.taps", n_taps)), opt_(AdamState::for_param(taps_)) {}

    StepResult step(const TrainBatch& b, const std::vector<cplx>& pilots) {
        StepResult r = forward_backward(b, pilots);
        adam_step(taps_, opt_, lr_);
        return r;
    }

    StepResult forward_backward(const TrainBatch& b, const std::vector<cplx>& pilots) {
        if (pilots.size() != b.n_symbols)
            throw std::invalid_argument("FfeMmseTrainer: pilots misaligned with the batch");
        taps_.zero_grad();
        std::vector<cplx> xt = detail::fir_forward(b, taps_);
        const double N = static_cast<double>(xt.size());
        double loss = 0;
        std::vector<cplx> D(xt.size());
        for (std::size_t k = 0; k < xt.size(); ++k) {
            const cplx err = xt[k] - pilots[k];
            loss += std::norm(err);
            D[k] = (2.0 / N) * err;
        }
        detail::fir_accumulate_grad(b, taps_, D);
        StepResult r;
        r.loss = loss / N;
        if (!std::isfinite(r.loss)) throw std::runtime_error("FfeMmseTrainer: non-finite loss");
        return r;
    }

    double loss_only(const TrainBatch& b, const std::vector<cplx>& pilots) const {
        std::vector<cplx> xt = detail::fir_forward(b, taps_);
        double loss = 0;
        for (std::size_t k = 0; k < xt.size(); ++k) loss += std::norm(xt[k] - pilots[k]);
        return loss / static_cast<double>(xt.size());
    }

    std::vector<cplx> equalize(const ComplexSignal& frame) const {
        FirEqualizer eq;
        eq.taps.resize(taps_.size() / 2);
        for (std::size_t i = 0; i < eq.taps.size(); ++i) eq.taps[i] = taps_.as_complex(i);
        return equalize_fir(frame, eq);
    }

    ParamTensor& taps() { return taps_; }

private:
    double lr_;
    ParamTensor taps_;
    AdamState opt_;
};

/// MMSE pre-training until the batch SER reaches the switch threshold, then
/// batch updates against the equalizer's own decisions.
class DdLmsTrainer {
public:
    DdLmsTrainer(Constellation c, int n_taps, double lr, double switch_ser = 1e-2)
        : c_(std::move(c)), ffe_(n_taps, lr), switch_ser_(switch_ser) {}

    bool decision_directed() const { return decision_directed_; }

    StepResult step(const TrainBatch& b, const std::vector<cplx>& pilots) {
        std::vector<cplx> xt = detail::fir_forward(b, ffe_.taps());
        if (!decision_directed_) {
            std::size_t errors = 0;
            for (std::size_t k = 0; k < xt.size(); ++k)
                if (c_.nearest_index(xt[k]) != c_.nearest_index(pilots[k])) ++errors;
            if (static_cast<double>(errors) / static_cast<double>(xt.size()) <= switch_ser_)
                decision_directed_ = true;
        }
        if (!decision_directed_) return ffe_.step(b, pilots);
        std::vector<cplx> decisions(xt.size());
        for (std::size_t k = 0; k < xt.size(); ++k) decisions[k] = c_.points[c_.nearest_index(xt[k])];
        return ffe_.step(b, decisions);
    }

    std::vector<cplx> equalize(const ComplexSignal& frame) const { return ffe_.equalize(frame); }
    ParamTensor& taps() { return ffe_.taps(); }

private:
    Constellation c_;
    FfeMmseTrainer ffe_;
    double switch_ser_;
    bool decision_directed_ = false;
};

} // namespace blindeq

#endif
