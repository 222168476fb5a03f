#ifndef BLINDEQ_EXPERIMENTS_HPP
#define BLINDEQ_EXPERIMENTS_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "blindeq/channels.hpp"
#include "blindeq/trainers.hpp"
#include "blindeq/vae_trainers.hpp"

namespace blindeq {

inline constexpr const char* kLibraryVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class EqualizerKind {
    VqVaeFir,
    VqVaeNn,
    VqVaeMp,
    VaeLinear,
    VaeMp,
    Cma,
    CmaBatch,
    FfeMmse,
    DdLms,
    Dbp,
};

inline const char* equalizer_kind_name(EqualizerKind k) {
    switch (k) {
        case EqualizerKind::VqVaeFir: return "vqvae-fir";
        case EqualizerKind::VqVaeNn: return "vqvae-nn";
        case EqualizerKind::VqVaeMp: return "vqvae-mp";
        case EqualizerKind::VaeLinear: return "vae-linear";
        case EqualizerKind::VaeMp: return "vae-mp";
        case EqualizerKind::Cma: return "cma";
        case EqualizerKind::CmaBatch: return "cma-batch";
        case EqualizerKind::FfeMmse: return "ffe-mmse";
        case EqualizerKind::DdLms: return "dd-lms";
        case EqualizerKind::Dbp: return "dbp";
    }
    return "unknown";
}

inline std::optional<EqualizerKind> equalizer_kind_from_name(const std::string& s) {
    for (EqualizerKind k :
         {EqualizerKind::VqVaeFir, EqualizerKind::VqVaeNn, EqualizerKind::VqVaeMp,
          EqualizerKind::VaeLinear, EqualizerKind::VaeMp, EqualizerKind::Cma,
          EqualizerKind::CmaBatch, EqualizerKind::FfeMmse, EqualizerKind::DdLms,
          EqualizerKind::Dbp})
        if (s == equalizer_kind_name(k)) return k;
    return std::nullopt;
}

struct EqualizerSpec {
    EqualizerKind kind = EqualizerKind::VqVaeFir;
    double lr = 2e-3;
    double rho = 1.0;
    bool dynamic_psi = false;
    int taps = 31;           // FIR-style equalizers
    double l2_weight = 1e-4; // NN decoders
    double switch_ser = 1e-2;
    int dbp_steps = 20;
    double cma_mu0 = 1e-3;

    std::string name() const { return equalizer_kind_name(kind); }
};

struct TrainingSpec {
    std::size_t total_symbols = 1 << 16;
    std::size_t batch = 1024;
    int epochs = 60;
    bool on_the_fly = false;
    std::size_t steps = 3000; // on-the-fly update count
};

enum class ChannelFamily { Linear, Fiber, Pa };

struct ChannelSpec {
    ChannelFamily family = ChannelFamily::Linear;
    std::vector<cplx> linear_taps = default_linear_channel_taps();
    double ps_rolloff = 0.1;
    FiberLink fiber;
    PaChannel pa;
};

struct ExperimentConfig {
    std::string name = "experiment";
    ChannelSpec channel;
    int constellation_order = 16;
    std::vector<EqualizerSpec> equalizers;
    TrainingSpec training;
    // exactly one sweep axis may be non-empty
    std::vector<double> snr_db;
    std::vector<double> launch_power_dbm;
    std::vector<double> pa_power_dbm;
    std::uint64_t seed = 1;
    std::size_t guard_symbols = 64;
    bool record_trace = false;
    std::size_t min_errors = 100;
    std::size_t eval_cap_symbols = 10'000'000;

    int sweep_axes() const {
        return (snr_db.empty() ? 0 : 1) + (launch_power_dbm.empty() ? 0 : 1) +
               (pa_power_dbm.empty() ? 0 : 1);
    }
    void validate() const {
        if (sweep_axes() != 1)
            throw std::invalid_argument("ExperimentConfig: exactly one sweep axis required");
        if (training.batch == 0 || training.batch > training.total_symbols)
            throw std::invalid_argument("ExperimentConfig: batch must be positive and <= dataset");
        if (equalizers.empty())
            throw std::invalid_argument("ExperimentConfig: no equalizers configured");
    }
};

struct TracePoint {
    std::size_t step;
    double loss;
    double ser;
};

struct PointResult {
    double axis_value = 0;
    std::string equalizer;
    double ser = 1.0;
    std::size_t errors = 0;
    std::size_t compared = 0;
    bool censored = false;
    bool diverged = false;
    double loss_final = 0;
    std::size_t steps = 0;
    double wall_ms = 0;
    std::uint64_t seed = 0;
    std::uint64_t checksum = 0;
    std::vector<TracePoint> trace;
};

struct ExperimentRecord {
    ExperimentConfig config;
    std::vector<PointResult> points;
    double wall_ms = 0;
    std::string library_version = kLibraryVersion;
};

// ---------------------------------------------------------------------------
// Channel data generation
// ---------------------------------------------------------------------------

struct Frame {
    ComplexSignal y;          // receiver-normalized observation (2 SPS)
    ComplexSignal y_physical; // pre-normalization observation (fiber only)
    SymbolFrame tx;
    double agc_gain = 1.0;
    double measured_snr_db = 0; // PA family: signal-to-noise at the receiver
};

namespace detail {

/// Channel instance at one sweep point.
struct ChannelInstance {
    ChannelSpec spec;
    int order;
    double noise_variance = 0; // linear family

    Frame generate(std::size_t n_symbols, SeededRng& rng) const {
        Constellation c = make_qam(order);
        Frame f;
        f.tx = draw_symbols(c, n_symbols, rng);
        switch (spec.family) {
            case ChannelFamily::Linear: {
                ComplexSignal shaped =
                    fir_filter(upsample(f.tx, 2), rrc_taps(spec.ps_rolloff, kPulseSpanSymbols, 2),
                               ConvMode::Same);
                LinearIsiChannel ch{spec.linear_taps, noise_variance};
                f.y = linear_channel_apply(shaped, ch, rng);
                break;
            }
            case ChannelFamily::Fiber: {
                f.y_physical = fiber_link_apply(f.tx, spec.fiber, spec.ps_rolloff, rng);
                f.y = f.y_physical;
                break;
            }
            case ChannelFamily::Pa: {
                f.y = pa_channel_apply(f.tx, spec.pa, spec.ps_rolloff, rng);
                const double var = spec.pa.noise_std_is_per_dim
                                       ? 2.0 * spec.pa.noise_std_volts * spec.pa.noise_std_volts
                                       : spec.pa.noise_std_volts * spec.pa.noise_std_volts;
                if (var > 0 && mean_power(f.y) > var)
                    f.measured_snr_db = 10.0 * std::log10(mean_power(f.y) / var - 1.0);
                break;
            }
        }
        if (spec.family != ChannelFamily::Linear) {
            // receiver AGC to the 2-SPS unit-symbol-power convention
            f.agc_gain = std::sqrt(0.5 / mean_power(f.y));
            for (auto& v : f.y.samples) v *= f.agc_gain;
        }
        return f;
    }
};

} // namespace detail

// ---------------------------------------------------------------------------
// Equalizer runners
// ---------------------------------------------------------------------------

namespace detail {

/// Uniform training/evaluation interface over the trainer zoo.
class EqRunner {
public:
    virtual ~EqRunner() = default;
    virtual StepResult train_step(const TrainBatch& b, const std::vector<cplx>& pilots) = 0;
    virtual std::vector<cplx> equalize(const Frame& f) const = 0;
    virtual SerResult score(const std::vector<cplx>& xt, const SymbolFrame& truth) const = 0;
    virtual std::uint64_t checksum() = 0;
};

inline SerResult score_with(const std::vector<cplx>& xt, const SymbolFrame& truth, SerSearch mode) {
    SymbolFrame dec = demap_hard(xt, truth.constellation);
    return align_and_ser(dec, truth, mode);
}

class VqVaeFirRunner : public EqRunner {
public:
    VqVaeFirRunner(const Constellation& c, const EqualizerSpec& s) : tr_(c, make_cfg(s)) {}
    static VqVaeFirConfig make_cfg(const EqualizerSpec& s) {
        VqVaeFirConfig cfg;
        cfg.decoder_taps = s.taps;
        cfg.lr = s.lr;
        cfg.rho = s.rho;
        cfg.weighting = s.dynamic_psi ? CommitWeighting::DynamicPsi : CommitWeighting::StaticRho;
        return cfg;
    }
    StepResult train_step(const TrainBatch& b, const std::vector<cplx>&) override {
        return tr_.step(b);
    }
    std::vector<cplx> equalize(const Frame& f) const override { return tr_.equalize(f.y); }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return score_with(xt, t, SerSearch::Phase4);
    }
    std::uint64_t checksum() override {
        auto p = tr_.parameters();
        return param_checksum({p.begin(), p.end()});
    }
    VqVaeFirTrainer& trainer() { return tr_; }

private:
    VqVaeFirTrainer tr_;
};

class VqVaeNnRunner : public EqRunner {
public:
    VqVaeNnRunner(const Constellation& c, const EqualizerSpec& s, ChannelFamily family,
                  SeededRng& rng)
        : tr_(c, make_cfg(s, family), rng) {}
    static VqVaeNnConfig make_cfg(const EqualizerSpec& s, ChannelFamily family) {
        VqVaeNnConfig cfg;
        if (family == ChannelFamily::Pa) {
            cfg.features = pa_feature_config();
            cfg.decoder_hidden = {64, 16};
            cfg.encoder_hidden = {64, 32};
            cfg.encoder_window = 23;
        } else {
            cfg.features = fiber_feature_config();
            cfg.decoder_hidden = {32, 8};
            cfg.encoder_hidden = {64, 32};
            cfg.encoder_window = 31;
        }
        cfg.lr = s.lr;
        cfg.rho = s.rho;
        cfg.weighting = s.dynamic_psi ? CommitWeighting::DynamicPsi : CommitWeighting::StaticRho;
        cfg.l2_weight = s.l2_weight;
        return cfg;
    }
    StepResult train_step(const TrainBatch& b, const std::vector<cplx>&) override {
        return tr_.step(b);
    }
    std::vector<cplx> equalize(const Frame& f) const override { return tr_.equalize(f.y); }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return score_with(xt, t, SerSearch::Phase4);
    }
    std::uint64_t checksum() override {
        auto p = tr_.parameters();
        return param_checksum({p.begin(), p.end()});
    }

private:
    VqVaeNnTrainer tr_;
};

class VqVaeMpRunner : public EqRunner {
public:
    VqVaeMpRunner(const Constellation& c, const EqualizerSpec& s) : tr_(c, make_cfg(s)) {}
    static VqVaeMpConfig make_cfg(const EqualizerSpec& s) {
        VqVaeMpConfig cfg;
        cfg.decoder_features.sets.p_a = {1, 3};
        for (int l = -10; l <= 10; ++l) cfg.decoder_features.sets.l_a[1].push_back(l);
        for (int l = -5; l <= 5; ++l) cfg.decoder_features.sets.l_a[3].push_back(l);
        cfg.encoder_orders = {1, 3};
        cfg.encoder_half_lags = 6;
        cfg.lr = s.lr;
        cfg.rho = s.rho;
        cfg.weighting = s.dynamic_psi ? CommitWeighting::DynamicPsi : CommitWeighting::StaticRho;
        return cfg;
    }
    StepResult train_step(const TrainBatch& b, const std::vector<cplx>&) override {
        return tr_.step(b);
    }
    std::vector<cplx> equalize(const Frame& f) const override { return tr_.equalize(f.y); }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return score_with(xt, t, SerSearch::Phase4);
    }
    std::uint64_t checksum() override {
        auto p = tr_.parameters();
        return param_checksum({p.begin(), p.end()});
    }
    VqVaeMpTrainer& trainer() { return tr_; }

private:
    VqVaeMpTrainer tr_;
};

class VaeLinearRunner : public EqRunner {
public:
    VaeLinearRunner(const Constellation& c, const EqualizerSpec& s, double noise_var)
        : tr_(c, make_cfg(s, noise_var)) {}
    static VaeFirConfig make_cfg(const EqualizerSpec& s, double noise_var) {
        VaeFirConfig cfg;
        cfg.decoder_taps = s.taps;
        cfg.lr = s.lr;
        cfg.init_sigma_w2 = noise_var > 0 ? noise_var : 0.1;
        cfg.init_sigma_d2 = noise_var > 0 ? noise_var : 0.1;
        return cfg;
    }
    StepResult train_step(const TrainBatch& b, const std::vector<cplx>&) override {
        return tr_.step(b);
    }
    std::vector<cplx> equalize(const Frame& f) const override { return tr_.equalize(f.y); }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return score_with(xt, t, SerSearch::Phase4);
    }
    std::uint64_t checksum() override {
        auto p = tr_.parameters();
        return param_checksum({p.begin(), p.end()});
    }
    VaeFirTrainer& trainer() { return tr_; }

private:
    VaeFirTrainer tr_;
};

class VaeMpRunner : public EqRunner {
public:
    VaeMpRunner(const Constellation& c, const EqualizerSpec& s) : tr_(c, make_cfg(s)) {}
    static VaeMpConfig make_cfg(const EqualizerSpec& s) {
        VaeMpConfig cfg;
        cfg.decoder_features.sets.p_a = {1, 3};
        for (int l = -10; l <= 10; ++l) cfg.decoder_features.sets.l_a[1].push_back(l);
        for (int l = -5; l <= 5; ++l) cfg.decoder_features.sets.l_a[3].push_back(l);
        cfg.encoder_orders = {1, 3};
        cfg.encoder_half_lags = 6;
        cfg.lr = s.lr;
        return cfg;
    }
    StepResult train_step(const TrainBatch& b, const std::vector<cplx>&) override {
        return tr_.step(b);
    }
    std::vector<cplx> equalize(const Frame& f) const override { return tr_.equalize(f.y); }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return score_with(xt, t, SerSearch::Phase4);
    }
    std::uint64_t checksum() override {
        auto p = tr_.parameters();
        return param_checksum({p.begin(), p.end()});
    }

private:
    VaeMpTrainer tr_;
};

class CmaRunner : public EqRunner {
public:
    CmaRunner(const Constellation& c, const EqualizerSpec& s)
        : state_(CmaState::dirac(s.taps, c, s.cma_mu0)) {}
    StepResult train_step(const TrainBatch& b, const std::vector<cplx>&) override {
        // one update per processed symbol over this batch window
        const std::ptrdiff_t T = static_cast<std::ptrdiff_t>(state_.taps.size());
        const std::ptrdiff_t c = (T - 1) / 2;
        std::vector<cplx> window(state_.taps.size());
        double loss = 0;
        for (std::size_t k = 0; k < b.n_symbols; ++k) {
            for (std::ptrdiff_t i = 0; i < T; ++i)
                window[static_cast<std::size_t>(i)] =
                    b.at(2 * static_cast<std::ptrdiff_t>(k) + c - i);
            cplx z = cma_step(state_, window, state_.current_mu());
            const double dev = std::norm(z) - state_.r2;
            loss += dev * dev;
        }
        StepResult r;
        r.loss = loss / static_cast<double>(b.n_symbols);
        return r;
    }
    std::vector<cplx> equalize(const Frame& f) const override {
        return equalize_fir(f.y, FirEqualizer{state_.taps});
    }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return genie_phase_ser(xt, t);
    }
    std::uint64_t checksum() override {
        ParamTensor t = ParamTensor::zeros("cma.taps", {state_.taps.size(), 2});
        for (std::size_t i = 0; i < state_.taps.size(); ++i) t.set_complex(i, state_.taps[i]);
        return param_checksum({&t});
    }

private:
    CmaState state_;
};

class CmaBatchRunner : public EqRunner {
public:
    CmaBatchRunner(const Constellation& c, const EqualizerSpec& s) : tr_(c, s.taps, s.lr) {}
    StepResult train_step(const TrainBatch& b, const std::vector<cplx>&) override {
        return tr_.step(b);
    }
    std::vector<cplx> equalize(const Frame& f) const override { return tr_.equalize(f.y); }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return genie_phase_ser(xt, t);
    }
    std::uint64_t checksum() override { return param_checksum({&tr_.taps()}); }

private:
    CmaBatchTrainer tr_;
};

class FfeRunner : public EqRunner {
public:
    FfeRunner(const EqualizerSpec& s) : tr_(s.taps, s.lr) {}
    StepResult train_step(const TrainBatch& b, const std::vector<cplx>& pilots) override {
        return tr_.step(b, pilots);
    }
    std::vector<cplx> equalize(const Frame& f) const override { return tr_.equalize(f.y); }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return score_with(xt, t, SerSearch::None);
    }
    std::uint64_t checksum() override { return param_checksum({&tr_.taps()}); }

private:
    FfeMmseTrainer tr_;
};

class DdLmsRunner : public EqRunner {
public:
    DdLmsRunner(const Constellation& c, const EqualizerSpec& s)
        : tr_(c, s.taps, s.lr, s.switch_ser) {}
    StepResult train_step(const TrainBatch& b, const std::vector<cplx>& pilots) override {
        return tr_.step(b, pilots);
    }
    std::vector<cplx> equalize(const Frame& f) const override { return tr_.equalize(f.y); }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return score_with(xt, t, SerSearch::None);
    }
    std::uint64_t checksum() override { return param_checksum({&tr_.taps()}); }

private:
    DdLmsTrainer tr_;
};

class DbpRunner : public EqRunner {
public:
    DbpRunner(const FiberLink& fiber, double rolloff, const EqualizerSpec& s)
        : fiber_(fiber), rolloff_(rolloff), steps_(s.dbp_steps) {}
    StepResult train_step(const TrainBatch&, const std::vector<cplx>&) override {
        return StepResult{}; // no trainable parameters
    }
    std::vector<cplx> equalize(const Frame& f) const override {
        return dbp(f.y_physical, fiber_, steps_, rolloff_).samples;
    }
    SerResult score(const std::vector<cplx>& xt, const SymbolFrame& t) const override {
        return genie_phase_ser(xt, t);
    }
    std::uint64_t checksum() override { return 0; }

private:
    FiberLink fiber_;
    double rolloff_;
    int steps_;
};

inline std::unique_ptr<EqRunner> make_runner(const EqualizerSpec& s, const ChannelInstance& ch,
                                             SeededRng& init_rng) {
    Constellation c = make_qam(ch.order);
    switch (s.kind) {
        case EqualizerKind::VqVaeFir: return std::make_unique<VqVaeFirRunner>(c, s);
        case EqualizerKind::VqVaeNn:
            return std::make_unique<VqVaeNnRunner>(c, s, ch.spec.family, init_rng);
        case EqualizerKind::VqVaeMp: return std::make_unique<VqVaeMpRunner>(c, s);
        case EqualizerKind::VaeLinear:
            return std::make_unique<VaeLinearRunner>(c, s, ch.noise_variance);
        case EqualizerKind::VaeMp: return std::make_unique<VaeMpRunner>(c, s);
        case EqualizerKind::Cma: return std::make_unique<CmaRunner>(c, s);
        case EqualizerKind::CmaBatch: return std::make_unique<CmaBatchRunner>(c, s);
        case EqualizerKind::FfeMmse: return std::make_unique<FfeRunner>(s);
        case EqualizerKind::DdLms: return std::make_unique<DdLmsRunner>(c, s);
        case EqualizerKind::Dbp:
            return std::make_unique<DbpRunner>(ch.spec.fiber, ch.spec.ps_rolloff, s);
    }
    throw std::logic_error("make_runner: unknown equalizer kind");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Training and evaluation drivers
// ---------------------------------------------------------------------------

namespace detail {

/// Fixed-dataset training: shuffled minibatches, reshuffled every epoch.
inline std::pair<StepResult, std::size_t> train_on_frame(EqRunner& eq, const Frame& frame,
                                                         const TrainingSpec& ts,
                                                         std::size_t guard, SeededRng& rng) {
    const std::size_t n = ts.total_symbols;
    const std::size_t nb = n / ts.batch;
    std::vector<std::size_t> order(nb);
    std::iota(order.begin(), order.end(), 0);
    StepResult last{};
    std::size_t steps = 0;
    for (int e = 0; e < ts.epochs; ++e) {
        for (std::size_t i = nb; i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(i)]);
        for (std::size_t bi : order) {
            const std::size_t k0 = guard + bi * ts.batch;
            TrainBatch b{&frame.y, static_cast<std::ptrdiff_t>(2 * k0), ts.batch};
            std::vector<cplx> pilots(frame.tx.symbols.begin() + static_cast<std::ptrdiff_t>(k0),
                                     frame.tx.symbols.begin() +
                                         static_cast<std::ptrdiff_t>(k0 + ts.batch));
            last = eq.train_step(b, pilots);
            ++steps;
        }
    }
    return {last, steps};
}

struct EvalOutcome {
    double ser = 1.0;
    std::size_t errors = 0;
    std::size_t compared = 0;
    bool censored = false;
};

/// Held-out evaluation sized for at least min_errors symbol errors, growing
/// the frame geometrically up to the cap; marked censored beyond it.
inline EvalOutcome evaluate(EqRunner& eq, const ChannelInstance& ch, std::size_t guard,
                            std::size_t min_errors, std::size_t cap, SeededRng eval_rng) {
    std::size_t n = 1 << 16;
    EvalOutcome out;
    for (;;) {
        SeededRng rng = eval_rng.fork(n);
        Frame f = ch.generate(n + 2 * guard, rng);
        auto xt = eq.equalize(f);
        std::vector<cplx> got(xt.begin() + static_cast<std::ptrdiff_t>(guard),
                              xt.end() - static_cast<std::ptrdiff_t>(guard));
        std::vector<cplx> want(f.tx.symbols.begin() + static_cast<std::ptrdiff_t>(guard),
                               f.tx.symbols.end() - static_cast<std::ptrdiff_t>(guard));
        SymbolFrame want_f{want, f.tx.constellation};
        // hand decisions or soft values to the kind-appropriate scorer
        SerResult r = eq.score(got, want_f);
        out.ser = r.ser;
        out.errors = r.errors;
        out.compared = r.compared;
        if (r.errors >= min_errors) return out;
        if (n >= cap) {
            out.censored = true;
            return out;
        }
        n = std::min(cap, n * 4);
    }
}

inline ChannelInstance channel_at(const ExperimentConfig& cfg, double axis) {
    ChannelInstance ch;
    ch.spec = cfg.channel;
    ch.order = cfg.constellation_order;
    switch (cfg.channel.family) {
        case ChannelFamily::Linear:
            ch.noise_variance = snr_to_noise_variance(make_qam(cfg.constellation_order), axis);
            break;
        case ChannelFamily::Fiber:
            ch.spec.fiber.launch_power_dbm = axis;
            break;
        case ChannelFamily::Pa:
            ch.spec.pa.avg_output_power_dbm = axis;
            break;
    }
    return ch;
}

} // namespace detail

/// One sweep point: fresh equalizer, fixed-dataset training, held-out SER.
inline PointResult run_point(const ExperimentConfig& cfg, double axis, const EqualizerSpec& spec,
                             std::size_t point_index) {
    const auto t0 = std::chrono::steady_clock::now();
    detail::ChannelInstance ch = detail::channel_at(cfg, axis);
    SeededRng point_rng = SeededRng(cfg.seed).fork(point_index);

    PointResult pr;
    pr.axis_value = axis;
    pr.equalizer = spec.name();
    pr.seed = point_rng.seed();
    try {
        SeededRng init_rng = point_rng.fork(1);
        auto runner = detail::make_runner(spec, ch, init_rng);
        if (spec.kind != EqualizerKind::Dbp) {
            SeededRng data_rng = point_rng.fork(2);
            Frame frame = ch.generate(cfg.training.total_symbols + 2 * cfg.guard_symbols, data_rng);
            SeededRng shuffle_rng = point_rng.fork(3);
            auto [last, steps] =
                detail::train_on_frame(*runner, frame, cfg.training, cfg.guard_symbols, shuffle_rng);
            pr.loss_final = last.loss;
            pr.steps = steps;
        }
        auto ev = detail::evaluate(*runner, ch, cfg.guard_symbols, cfg.min_errors,
                                   cfg.eval_cap_symbols, point_rng.fork(4));
        pr.ser = ev.ser;
        pr.errors = ev.errors;
        pr.compared = ev.compared;
        pr.censored = ev.censored;
        pr.checksum = runner->checksum();
    } catch (const std::runtime_error&) {
        pr.diverged = true; // recorded, not fatal
        pr.ser = 1.0;
    }
    pr.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                     .count();
    return pr;
}

/// SER-vs-SNR sweep over the linear channel.
inline ExperimentRecord run_snr_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.channel.family != ChannelFamily::Linear || cfg.snr_db.empty())
        throw std::invalid_argument("run_snr_sweep: linear channel with an SNR axis required");
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentRecord rec;
    rec.config = cfg;
    std::size_t idx = 0;
    for (double snr : cfg.snr_db)
        for (const auto& eq : cfg.equalizers) rec.points.push_back(run_point(cfg, snr, eq, idx++));
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

/// SER-vs-launch-power sweep over the fiber link.
inline ExperimentRecord run_launch_power_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.channel.family != ChannelFamily::Fiber || cfg.launch_power_dbm.empty())
        throw std::invalid_argument("run_launch_power_sweep: fiber channel with a power axis required");
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentRecord rec;
    rec.config = cfg;
    std::size_t idx = 0;
    for (double p : cfg.launch_power_dbm)
        for (const auto& eq : cfg.equalizers) rec.points.push_back(run_point(cfg, p, eq, idx++));
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

/// SER-vs-output-power sweep over the PA channel.
inline ExperimentRecord run_pa_power_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.channel.family != ChannelFamily::Pa || cfg.pa_power_dbm.empty())
        throw std::invalid_argument("run_pa_power_sweep: PA channel with a power axis required");
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentRecord rec;
    rec.config = cfg;
    std::size_t idx = 0;
    for (double p : cfg.pa_power_dbm)
        for (const auto& eq : cfg.equalizers) rec.points.push_back(run_point(cfg, p, eq, idx++));
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

/// Convergence traces on freshly generated data for a (batch, lr) grid.
/// SER is measured on each update's own fresh batch before the update.
inline ExperimentRecord run_convergence(const ExperimentConfig& cfg,
                                        const std::vector<std::pair<std::size_t, double>>& grid) {
    if (!cfg.training.on_the_fly)
        throw std::invalid_argument("run_convergence: on_the_fly training required");
    if (cfg.snr_db.size() != 1)
        throw std::invalid_argument("run_convergence: one SNR operating point required");
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentRecord rec;
    rec.config = cfg;
    const double snr = cfg.snr_db[0];
    std::size_t idx = 0;
    for (const auto& [batch, lr] : grid) {
        for (EqualizerSpec eq : cfg.equalizers) {
            eq.lr = lr;
            detail::ChannelInstance ch = detail::channel_at(cfg, snr);
            SeededRng point_rng = SeededRng(cfg.seed).fork(idx);
            PointResult pr;
            pr.axis_value = snr;
            pr.equalizer = eq.name() + "@N" + std::to_string(batch) + "@lr" + std::to_string(lr);
            pr.seed = point_rng.seed();
            const auto tp0 = std::chrono::steady_clock::now();
            try {
                SeededRng init_rng = point_rng.fork(1);
                auto runner = detail::make_runner(eq, ch, init_rng);
                SeededRng data_rng = point_rng.fork(2);
                const std::size_t margin = cfg.guard_symbols;
                for (std::size_t s = 0; s < cfg.training.steps; ++s) {
                    Frame f = ch.generate(batch + 2 * margin, data_rng);
                    TrainBatch b{&f.y, static_cast<std::ptrdiff_t>(2 * margin), batch};
                    std::vector<cplx> pilots(
                        f.tx.symbols.begin() + static_cast<std::ptrdiff_t>(margin),
                        f.tx.symbols.begin() + static_cast<std::ptrdiff_t>(margin + batch));
                    // measure on this fresh batch with the pre-update parameters
                    auto xt = runner->equalize(f);
                    std::vector<cplx> got(xt.begin() + static_cast<std::ptrdiff_t>(margin),
                                          xt.begin() + static_cast<std::ptrdiff_t>(margin + batch));
                    SymbolFrame want{pilots, f.tx.constellation};
                    const double ser = runner->score(got, want).ser;
                    StepResult r = runner->train_step(b, pilots);
                    pr.trace.push_back({s, r.loss, ser});
                    pr.loss_final = r.loss;
                }
                pr.steps = cfg.training.steps;
                auto evo = detail::evaluate(*runner, ch, cfg.guard_symbols, cfg.min_errors,
                                            cfg.eval_cap_symbols, point_rng.fork(4));
                pr.ser = evo.ser;
                pr.errors = evo.errors;
                pr.compared = evo.compared;
                pr.censored = evo.censored;
                pr.checksum = runner->checksum();
            } catch (const std::runtime_error&) {
                pr.diverged = true;
            }
            pr.wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - tp0)
                             .count();
            if (!cfg.record_trace) pr.trace.clear();
            rec.points.push_back(std::move(pr));
            ++idx;
        }
    }
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

// ---------------------------------------------------------------------------
// Persistence: CSV, constellation export, SVG
// ---------------------------------------------------------------------------

inline void write_sweep_csv(const ExperimentRecord& rec, std::ostream& os) {
    os << "axis_value,equalizer,ser,loss_final,steps,wall_ms,seed\n";
    os.precision(10);
    for (const auto& p : rec.points)
        os << p.axis_value << ',' << p.equalizer << ',' << p.ser << ',' << p.loss_final << ','
           << p.steps << ',' << p.wall_ms << ',' << p.seed << '\n';
}

inline void write_trace_csv(const PointResult& p, std::ostream& os) {
    os << "step,loss,ser\n";
    os.precision(10);
    for (const auto& t : p.trace) os << t.step << ',' << t.loss << ',' << t.ser << '\n';
}

/// CSV of (re, im) pairs for constellation scatter plots.
inline void export_constellation(const std::vector<cplx>& x_tilde, std::ostream& os) {
    os << "re,im\n";
    os.precision(10);
    for (auto v : x_tilde) os << v.real() << ',' << v.imag() << '\n';
}

/// Minimal static line plot (log-y) of SER vs the sweep axis, one polyline
/// per equalizer.
inline void write_sweep_svg(const ExperimentRecord& rec, std::ostream& os) {
    const int W = 640, H = 420, ml = 60, mr = 20, mt = 20, mb = 40;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = 1e-300;
    for (const auto& p : rec.points) {
        xmin = std::min(xmin, p.axis_value);
        xmax = std::max(xmax, p.axis_value);
        if (p.ser > 0) {
            ymin = std::min(ymin, p.ser);
            ymax = std::max(ymax, p.ser);
        }
    }
    if (xmax <= xmin) xmax = xmin + 1;
    ymin = std::max(ymin / 2, 1e-8);
    ymax = std::min(1.0, ymax * 2);
    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto sy = [&](double s) {
        const double t = (std::log10(std::max(s, ymin)) - std::log10(ymin)) /
                         (std::log10(ymax) - std::log10(ymin));
        return H - mb - t * (H - mt - mb);
    };
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
       << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
       << "' stroke='black'/>\n";
    const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                            "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    std::vector<std::string> names;
    for (const auto& p : rec.points)
        if (std::find(names.begin(), names.end(), p.equalizer) == names.end())
            names.push_back(p.equalizer);
    for (std::size_t ni = 0; ni < names.size(); ++ni) {
        std::ostringstream pts;
        for (const auto& p : rec.points)
            if (p.equalizer == names[ni] && p.ser > 0)
                pts << sx(p.axis_value) << ',' << sy(p.ser) << ' ';
        os << "<polyline fill='none' stroke='" << colors[ni % 8] << "' stroke-width='2' points='"
           << pts.str() << "'/>\n";
        os << "<text x='" << W - mr - 150 << "' y='" << mt + 16 * (ni + 1) << "' fill='"
           << colors[ni % 8] << "' font-size='12'>" << names[ni] << "</text>\n";
    }
    os << "<text x='" << (W / 2) << "' y='" << H - 8 << "' font-size='12'>sweep axis</text>\n";
    os << "<text x='12' y='" << (H / 2) << "' font-size='12' transform='rotate(-90 12 "
       << (H / 2) << ")'>SER</text>\n";
    os << "</svg>\n";
}

} // namespace blindeq

#endif
