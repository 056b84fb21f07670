#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

// Helpers shared by both kernel backends. The compute loops themselves live
// in serial.cpp (reference) and parallel.cpp (OpenMP) and must accumulate in
// the same order; see kernels.hpp.

namespace msav::kernels::detail {

struct Twiddles {
  std::vector<double> re;
  std::vector<double> im;

  explicit Twiddles(std::size_t n) : re(n / 2), im(n / 2) {
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(n);
      re[k] = std::cos(ang);
      im[k] = std::sin(ang);
    }
  }
};

/// In-place radix-2 FFT; n must be a power of two.
inline void fft_inplace(double* re, double* im, std::size_t n,
                        const Twiddles& tw) {
  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const double wr = tw.re[k * step];
        const double wi = tw.im[k * step];
        const std::size_t a = i + k;
        const std::size_t b = i + k + len / 2;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

/// One STFT frame: windowed slice -> one-sided power spectrum.
inline void frame_power(const float* frame_start, const float* window,
                        std::size_t n_fft, const Twiddles& tw, double* re,
                        double* im, float* power_out) {
  for (std::size_t i = 0; i < n_fft; ++i) {
    re[i] = static_cast<double>(frame_start[i]) * static_cast<double>(window[i]);
    im[i] = 0.0;
  }
  fft_inplace(re, im, n_fft, tw);
  for (std::size_t k = 0; k <= n_fft / 2; ++k) {
    power_out[k] = static_cast<float>(re[k] * re[k] + im[k] * im[k]);
  }
}

}  // namespace msav::kernels::detail
