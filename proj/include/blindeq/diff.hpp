#ifndef BLINDEQ_DIFF_HPP
#define BLINDEQ_DIFF_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blindeq/rng.hpp"

namespace blindeq {

/// Flat trainable tensor. Complex parameters are stored as interleaved
/// (re, im) pairs.
struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;

    static ParamTensor zeros(std::string name, std::vector<std::size_t> shape) {
        ParamTensor t;
        t.name = std::move(name);
        t.shape = std::move(shape);
        std::size_t n = 1;
        for (auto d : t.shape) n *= d;
        t.values.assign(n, 0.0);
        t.grad.assign(n, 0.0);
        return t;
    }

    std::size_t size() const { return values.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    std::complex<double> as_complex(std::size_t i) const { return {values[2 * i], values[2 * i + 1]}; }
    void set_complex(std::size_t i, std::complex<double> v) {
        values[2 * i] = v.real();
        values[2 * i + 1] = v.imag();
    }
    void add_complex_grad(std::size_t i, std::complex<double> g) {
        grad[2 * i] += g.real();
        grad[2 * i + 1] += g.imag();
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    long step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_param(const ParamTensor& p) {
        AdamState s;
        s.first_moment.assign(p.size(), 0.0);
        s.second_moment.assign(p.size(), 0.0);
        return s;
    }
};

/// Standard Adam update with bias correction, consuming p.grad.
inline void adam_step(ParamTensor& p, AdamState& s, double lr) {
    if (s.first_moment.size() != p.size())
        throw std::invalid_argument("adam_step: state/parameter shape mismatch");
    ++s.step_count;
    const double b1c = 1.0 - std::pow(s.beta1, static_cast<double>(s.step_count));
    const double b2c = 1.0 - std::pow(s.beta2, static_cast<double>(s.step_count));
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        s.first_moment[i] = s.beta1 * s.first_moment[i] + (1.0 - s.beta1) * g;
        s.second_moment[i] = s.beta2 * s.second_moment[i] + (1.0 - s.beta2) * g * g;
        const double mhat = s.first_moment[i] / b1c;
        const double vhat = s.second_moment[i] / b2c;
        p.values[i] -= lr * mhat / (std::sqrt(vhat) + s.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Small fully connected networks
// ---------------------------------------------------------------------------

/// Affine layers with ReLU on hidden layers and a linear output layer.
/// When residual_input_to_output is set, the input pair starting at
/// residual_input_index is added to the (two-wide) output.
struct MlpSpec {
    std::vector<int> layer_widths; // input, hidden..., output
    bool residual_input_to_output = false;
    int residual_input_index = 0;

    int n_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
};

struct MlpParams {
    std::vector<ParamTensor> weights; // row-major (out x in)
    std::vector<ParamTensor> biases;

    std::vector<ParamTensor*> all() {
        std::vector<ParamTensor*> v;
        for (auto& w : weights) v.push_back(&w);
        for (auto& b : biases) v.push_back(&b);
        return v;
    }
    void zero_grad() {
        for (auto& w : weights) w.zero_grad();
        for (auto& b : biases) b.zero_grad();
    }
};

/// Hidden layers get He-uniform init (scaled by fan-in); the output layer
/// starts at zero so residual models begin as a passthrough.
inline MlpParams mlp_init(const MlpSpec& spec, SeededRng& rng, const std::string& prefix = "mlp") {
    if (spec.layer_widths.size() < 2) throw std::invalid_argument("mlp_init: need >= 1 layer");
    MlpParams p;
    for (int l = 0; l < spec.n_layers(); ++l) {
        const std::size_t in = static_cast<std::size_t>(spec.layer_widths[static_cast<std::size_t>(l)]);
        const std::size_t out = static_cast<std::size_t>(spec.layer_widths[static_cast<std::size_t>(l) + 1]);
        ParamTensor w = ParamTensor::zeros(prefix + ".w" + std::to_string(l), {out, in});
        ParamTensor b = ParamTensor::zeros(prefix + ".b" + std::to_string(l), {out});
        const bool last = (l == spec.n_layers() - 1);
        if (!last) {
            const double bound = std::sqrt(6.0 / static_cast<double>(in));
            for (auto& v : w.values) v = bound * (2.0 * rng.uniform() - 1.0);
        }
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    return p;
}

struct MlpTape {
    std::vector<std::vector<double>> layer_in; // input to layer l
    std::vector<std::vector<double>> preact;   // pre-activation of layer l
};

inline void mlp_forward(const MlpSpec& spec, const MlpParams& params,
                        const std::vector<double>& input, std::vector<double>& output,
                        MlpTape* tape = nullptr) {
    const int L = spec.n_layers();
    if (static_cast<int>(input.size()) != spec.layer_widths[0])
        throw std::invalid_argument("mlp_forward: input width mismatch");
    if (tape) {
        tape->layer_in.resize(static_cast<std::size_t>(L));
        tape->preact.resize(static_cast<std::size_t>(L));
    }
    std::vector<double> cur = input;
    for (int l = 0; l < L; ++l) {
        const auto& w = params.weights[static_cast<std::size_t>(l)];
        const auto& b = params.biases[static_cast<std::size_t>(l)];
        const std::size_t out_w = w.shape[0], in_w = w.shape[1];
        if (cur.size() != in_w) throw std::invalid_argument("mlp_forward: layer width mismatch");
        if (tape) tape->layer_in[static_cast<std::size_t>(l)] = cur;
        std::vector<double> next(out_w);
        for (std::size_t o = 0; o < out_w; ++o) {
            double acc = b.values[o];
            const double* wr = &w.values[o * in_w];
            for (std::size_t i = 0; i < in_w; ++i) acc += wr[i] * cur[i];
            next[o] = acc;
        }
        if (tape) tape->preact[static_cast<std::size_t>(l)] = next;
        if (l + 1 < L)
            for (auto& v : next) v = v > 0.0 ? v : 0.0;
        cur = std::move(next);
    }
    if (spec.residual_input_to_output) {
        if (cur.size() != 2) throw std::invalid_argument("mlp_forward: residual needs 2-wide output");
        cur[0] += input[static_cast<std::size_t>(spec.residual_input_index)];
        cur[1] += input[static_cast<std::size_t>(spec.residual_input_index) + 1];
    }
    output = std::move(cur);
}

/// Reverse pass for one forward call. Accumulates parameter gradients into
/// params.grad; optionally returns the gradient with respect to the input.
inline void mlp_backward(const MlpSpec& spec, MlpParams& params, const MlpTape& tape,
                         const std::vector<double>& output_grad,
                         std::vector<double>* input_grad = nullptr) {
    const int L = spec.n_layers();
    if (static_cast<int>(tape.layer_in.size()) != L)
        throw std::invalid_argument("mlp_backward: stale tape");
    std::vector<double> g = output_grad;
    std::vector<double> residual_extra;
    if (spec.residual_input_to_output) residual_extra = output_grad;
    for (int l = L - 1; l >= 0; --l) {
        auto& w = params.weights[static_cast<std::size_t>(l)];
        auto& b = params.biases[static_cast<std::size_t>(l)];
        const std::size_t out_w = w.shape[0], in_w = w.shape[1];
        const auto& x = tape.layer_in[static_cast<std::size_t>(l)];
        const auto& z = tape.preact[static_cast<std::size_t>(l)];
        if (l + 1 < L)
            for (std::size_t o = 0; o < out_w; ++o)
                if (z[o] <= 0.0) g[o] = 0.0;
        std::vector<double> gin(in_w, 0.0);
        for (std::size_t o = 0; o < out_w; ++o) {
            const double go = g[o];
            if (go == 0.0) continue;
            b.grad[o] += go;
            double* wg = &w.grad[o * in_w];
            const double* wr = &w.values[o * in_w];
            for (std::size_t i = 0; i < in_w; ++i) {
                wg[i] += go * x[i];
                gin[i] += go * wr[i];
            }
        }
        g = std::move(gin);
    }
    if (spec.residual_input_to_output) {
        g[static_cast<std::size_t>(spec.residual_input_index)] += residual_extra[0];
        g[static_cast<std::size_t>(spec.residual_input_index) + 1] += residual_extra[1];
    }
    if (input_grad) *input_grad = std::move(g);
}

// ---------------------------------------------------------------------------
// Straight-through estimator
// ---------------------------------------------------------------------------

/// Forward value is x_hard; the backward contract copies the incoming
/// gradient to x_soft and sends none to x_hard.
inline std::vector<std::complex<double>> straight_through(
    const std::vector<std::complex<double>>& x_soft,
    const std::vector<std::complex<double>>& x_hard) {
    if (x_soft.size() != x_hard.size())
        throw std::invalid_argument("straight_through: length mismatch");
    return x_hard;
}

inline void ste_backward(const std::vector<std::complex<double>>& grad_out,
                         std::vector<std::complex<double>>& grad_soft) {
    if (grad_soft.size() != grad_out.size())
        throw std::invalid_argument("ste_backward: length mismatch");
    for (std::size_t i = 0; i < grad_out.size(); ++i) grad_soft[i] += grad_out[i];
}

// ---------------------------------------------------------------------------
// L2 penalty
// ---------------------------------------------------------------------------

/// weight * sum of squared values over the given tensors; gradients are
/// accumulated. Callers pass the input/hidden weight matrices only.
inline double l2_penalty(const std::vector<ParamTensor*>& tensors, double weight,
                         bool accumulate_grad = true) {
    if (weight < 0) throw std::invalid_argument("l2_penalty: negative weight");
    double s = 0;
    for (auto* t : tensors) {
        for (std::size_t i = 0; i < t->size(); ++i) {
            s += t->values[i] * t->values[i];
            if (accumulate_grad) t->grad[i] += 2.0 * weight * t->values[i];
        }
    }
    return weight * s;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Central differences per coordinate against the already-populated analytic
/// gradients. Returns the worst relative error over all coordinates.
inline double finite_diff_check(const std::function<double()>& loss,
                                std::vector<ParamTensor*> params, double h = 1e-5) {
    double worst = 0.0;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double keep = p->values[i];
            p->values[i] = keep + h;
            const double lp = loss();
            p->values[i] = keep - h;
            const double lm = loss();
            p->values[i] = keep;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = p->grad[i];
            const double denom = std::max(std::abs(fd), std::abs(an));
            if (denom < 1e-8) continue;
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Flat binary, little-endian:
//   magic "BEQCKPT1" | u32 tensor count | per tensor:
//   u32 name length | name bytes | u32 ndims | u64 dims... | f64 payload

namespace detail {
template <typename T>
inline void write_raw(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
inline T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated stream");
    return v;
}
} // namespace detail

inline void checkpoint_save(const std::vector<const ParamTensor*>& tensors, std::ostream& os) {
    os.write("BEQCKPT1", 8);
    detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto* t : tensors) {
        detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t->name.size()));
        os.write(t->name.data(), static_cast<std::streamsize>(t->name.size()));
        detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t->shape.size()));
        for (auto d : t->shape) detail::write_raw<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t->values.data()),
                 static_cast<std::streamsize>(t->values.size() * sizeof(double)));
    }
}

inline std::vector<ParamTensor> checkpoint_load(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "BEQCKPT1", 8) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    const auto count = detail::read_raw<std::uint32_t>(is);
    std::vector<ParamTensor> out;
    out.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = detail::read_raw<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto ndims = detail::read_raw<std::uint32_t>(is);
        std::vector<std::size_t> shape(ndims);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(detail::read_raw<std::uint64_t>(is));
            n *= d;
        }
        ParamTensor p = ParamTensor::zeros(name, shape);
        is.read(reinterpret_cast<char*>(p.values.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated payload");
        out.push_back(std::move(p));
    }
    return out;
}

/// FNV-1a over the serialized payload; used as the converged-parameter
/// checksum in experiment records.
inline std::uint64_t param_checksum(const std::vector<const ParamTensor*>& tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto* t : tensors) {
        feed(t->name.data(), t->name.size());
        feed(t->values.data(), t->values.size() * sizeof(double));
    }
    return h;
}

} // namespace blindeq

#endif
