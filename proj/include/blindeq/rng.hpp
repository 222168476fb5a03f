#ifndef BLINDEQ_RNG_HPP
#define BLINDEQ_RNG_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

namespace blindeq {

/// Counter-based deterministic random generator (SplitMix64 in counter
/// mode). Every output is a pure function of (seed, counter), so streams
/// can be forked, replayed, and compared across runs. The integer path is
/// bit-exact everywhere; Gaussian draws additionally depend on the
/// platform's libm rounding of log/cos/sin.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        return mix(seed_ + 0x9E3779B97F4A7C15ULL * ++counter_);
    }

    /// Independent stream derived from (seed, label); does not advance this stream.
    SeededRng fork(std::uint64_t label) const {
        return SeededRng(mix(seed_ ^ mix(label ^ 0xA5A5A5A5A5A5A5A5ULL)));
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Multiply-shift; bias is below 2^-53 for the
    /// small n used here.
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard complex circular Gaussian, unit total variance
    /// (variance 1/2 per real dimension). Box-Muller.
    std::complex<double> gaussian_pair() {
        double u1 = uniform();
        double u2 = uniform();
        // guard the log singularity at u1 == 0
        double r = std::sqrt(-std::log(1.0 - u1));
        double th = 2.0 * std::numbers::pi * u2;
        return {r * std::cos(th), r * std::sin(th)};
    }

    /// Real standard normal (unit variance); one component of a pair.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        std::complex<double> g = gaussian_pair();
        // gaussian_pair has variance 1/2 per component
        constexpr double s = 1.4142135623730951; // sqrt(2)
        have_spare_ = true;
        spare_ = s * g.imag();
        return s * g.real();
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace blindeq

#endif
