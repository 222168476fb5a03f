#ifndef BLINDEQ_FFT_HPP
#define BLINDEQ_FFT_HPP

#include <complex>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace blindeq {

/// Unnormalized forward DFT, X_k = sum_n x_n exp(-j 2 pi k n / N).
inline std::vector<std::complex<double>> fft_fwd(const std::vector<std::complex<double>>& x) {
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> out;
    fft.fwd(out, x);
    return out;
}

/// Inverse DFT with 1/N normalization.
inline std::vector<std::complex<double>> fft_inv(const std::vector<std::complex<double>>& X) {
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> out;
    fft.inv(out, X);
    return out;
}

/// Bin frequencies in cycles per sample, natural FFT order:
/// 0, 1/N, ..., then negative frequencies.
inline std::vector<double> fft_freqs(std::size_t n) {
    std::vector<double> f(n);
    const std::ptrdiff_t N = static_cast<std::ptrdiff_t>(n);
    for (std::ptrdiff_t k = 0; k < N; ++k) {
        std::ptrdiff_t kk = (k <= (N - 1) / 2) ? k : k - N;
        f[static_cast<std::size_t>(k)] = static_cast<double>(kk) / static_cast<double>(N);
    }
    return f;
}

} // namespace blindeq

#endif
