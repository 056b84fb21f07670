#include "msav/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "msav/ftz.hpp"
#include "msav/kernels.hpp"

namespace msav::dsp {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Filter edge frequencies: n_mels + 2 points equally spaced on the mel scale.
std::vector<double> mel_points(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> pts(cfg.n_mels + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double mel =
        lo + (hi - lo) * static_cast<double>(i) /
                 static_cast<double>(cfg.n_mels + 1);
    pts[i] = mel_to_hz(mel);
  }
  return pts;
}

}  // namespace

AudioClip peak_normalize(AudioClip clip) {
  float peak = 0.0f;
  for (float v : clip.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0f) {
    const float inv = 1.0f / peak;
    for (float& v : clip.samples) v *= inv;
  }
  return clip;
}

AudioClip resample_linear(const AudioClip& clip, std::size_t target_rate) {
  if (clip.sample_rate == 0) {
    throw std::invalid_argument("resample: clip has no sample rate");
  }
  if (clip.sample_rate == target_rate) {
    return clip;
  }
  AudioClip out;
  out.sample_rate = target_rate;
  const std::size_t n = clip.samples.size();
  if (n == 0) return out;
  const double ratio = static_cast<double>(target_rate) /
                       static_cast<double>(clip.sample_rate);
  const std::size_t out_n = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * ratio));
  out.samples.resize(out_n);
  const double step = static_cast<double>(clip.sample_rate) /
                      static_cast<double>(target_rate);
  for (std::size_t i = 0; i < out_n; ++i) {
    const double t = static_cast<double>(i) * step;
    const std::size_t i0 = std::min(static_cast<std::size_t>(t), n - 1);
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double frac = t - static_cast<double>(i0);
    out.samples[i] = static_cast<float>(
        (1.0 - frac) * static_cast<double>(clip.samples[i0]) +
        frac * static_cast<double>(clip.samples[i1]));
  }
  return out;
}

std::vector<float> mel_filterbank(const MelConfig& cfg) {
  const std::size_t n_bins = cfg.n_fft / 2 + 1;
  const std::vector<double> pts = mel_points(cfg);
  std::vector<float> fb(cfg.n_mels * n_bins, 0.0f);
  const double bin_hz = static_cast<double>(cfg.target_rate) /
                        static_cast<double>(cfg.n_fft);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double f_lo = pts[m];
    const double f_c = pts[m + 1];
    const double f_hi = pts[m + 2];
    const double enorm = 2.0 / (f_hi - f_lo);  // Slaney area normalization
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = bin_hz * static_cast<double>(k);
      double w = 0.0;
      if (f > f_lo && f < f_hi) {
        w = f <= f_c ? (f - f_lo) / (f_c - f_lo) : (f_hi - f) / (f_hi - f_c);
      }
      fb[m * n_bins + k] = static_cast<float>(w * enorm);
    }
  }
  return fb;
}

std::vector<double> mel_center_freqs(const MelConfig& cfg) {
  const std::vector<double> pts = mel_points(cfg);
  return {pts.begin() + 1, pts.end() - 1};
}

Tensor log_mel(const AudioClip& clip, const MelConfig& cfg) {
  if (clip.sample_rate != cfg.target_rate) {
    throw std::invalid_argument(
        "log_mel expects a clip at " + std::to_string(cfg.target_rate) +
        " Hz, got " + std::to_string(clip.sample_rate));
  }
  const std::size_t n = clip.samples.size();
  if (n < cfg.hop) {
    throw std::invalid_argument("clip shorter than one hop (" +
                                std::to_string(n) + " < " +
                                std::to_string(cfg.hop) + " samples)");
  }
  const std::size_t n_frames = 1 + n / cfg.hop;
  const std::size_t half = cfg.n_fft / 2;

  // centered frames: reflect-pad half a window on each side
  std::vector<float> padded(n + 2 * half);
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(n) - 1;
  for (std::size_t i = 0; i < padded.size(); ++i) {
    std::ptrdiff_t idx =
        static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(half);
    if (last == 0) {
      idx = 0;
    } else {
      while (idx < 0 || idx > last) {
        if (idx < 0) idx = -idx;
        if (idx > last) idx = 2 * last - idx;
      }
    }
    padded[i] = clip.samples[static_cast<std::size_t>(idx)];
  }

  // periodic Hann window
  std::vector<float> window(cfg.n_fft);
  for (std::size_t i = 0; i < cfg.n_fft; ++i) {
    window[i] = static_cast<float>(
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                             static_cast<double>(cfg.n_fft)));
  }

  const std::size_t n_bins = cfg.n_fft / 2 + 1;
  std::vector<float> power(n_frames * n_bins);
  kernels::stft_power(padded.data(), n_frames, cfg.n_fft, cfg.hop,
                      window.data(), power.data());

  const std::vector<float> fb = mel_filterbank(cfg);
  Tensor mel = Tensor::zeros({n_frames, cfg.n_mels});
  // [n_frames, n_bins] x [n_mels, n_bins]^T
  kernels::gemm(false, true, n_frames, n_bins, cfg.n_mels, power.data(),
                fb.data(), mel.data().data(), false);

  auto out = mel.data();
  if (cfg.log_base == LogBase::natural) {
    kernels::log_clamped_fwd(out.size(), out.data(), cfg.log_floor,
                             out.data());
  } else {
    for (float& v : out) {
      v = 10.0f * std::log10(std::max(v, cfg.log_floor));
    }
  }
  return mel;
}

BinStats fit_bin_stats(std::span<const Tensor> spectrograms) {
  if (spectrograms.empty()) {
    throw std::invalid_argument("fit_bin_stats: empty training set");
  }
  const std::size_t n_mels = spectrograms[0].shape()[1];
  std::size_t total_frames = 0;
  for (const Tensor& s : spectrograms) {
    if (s.rank() != 2 || s.shape()[1] != n_mels) {
      throw std::invalid_argument("fit_bin_stats: inconsistent spectrogram " +
                                  shape_str(s.shape()));
    }
    total_frames += s.shape()[0];
  }
  if (total_frames < 2) {
    throw std::invalid_argument("fit_bin_stats: need at least 2 frames");
  }
  // two-pass mean / biased std
  std::vector<double> mean(n_mels, 0.0);
  for (const Tensor& s : spectrograms) {
    const auto d = s.data();
    const std::size_t frames = s.shape()[0];
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t b = 0; b < n_mels; ++b) {
        mean[b] += static_cast<double>(d[t * n_mels + b]);
      }
    }
  }
  for (double& v : mean) v /= static_cast<double>(total_frames);
  std::vector<double> var(n_mels, 0.0);
  for (const Tensor& s : spectrograms) {
    const auto d = s.data();
    const std::size_t frames = s.shape()[0];
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t b = 0; b < n_mels; ++b) {
        const double diff = static_cast<double>(d[t * n_mels + b]) - mean[b];
        var[b] += diff * diff;
      }
    }
  }
  BinStats stats;
  stats.mean.resize(n_mels);
  stats.std_dev.resize(n_mels);
  for (std::size_t b = 0; b < n_mels; ++b) {
    stats.mean[b] = static_cast<float>(mean[b]);
    stats.std_dev[b] = static_cast<float>(
        std::sqrt(var[b] / static_cast<double>(total_frames)));
  }
  return stats;
}

Tensor standardize(const Tensor& spectrogram, const BinStats& stats) {
  const std::size_t n_mels = stats.mean.size();
  if (spectrogram.rank() != 2 || spectrogram.shape()[1] != n_mels) {
    throw std::invalid_argument("standardize: spectrogram " +
                                shape_str(spectrogram.shape()) +
                                " does not match stats over " +
                                std::to_string(n_mels) + " bins");
  }
  Tensor out = Tensor::zeros(spectrogram.shape());
  const auto src = spectrogram.data();
  auto dst = out.data();
  const std::size_t frames = spectrogram.shape()[0];
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t b = 0; b < n_mels; ++b) {
      dst[t * n_mels + b] = (src[t * n_mels + b] - stats.mean[b]) /
                            (stats.std_dev[b] + stats.eps);
    }
  }
  return out;
}

void save_bin_stats(const BinStats& stats, const std::filesystem::path& path) {
  const std::size_t n = stats.mean.size();
  std::vector<float> data(2 * n);
  std::copy(stats.mean.begin(), stats.mean.end(), data.begin());
  std::copy(stats.std_dev.begin(), stats.std_dev.end(), data.begin() + n);
  write_ftz(path, Tensor::from_data({2, n}, std::move(data)));
}

BinStats load_bin_stats(const std::filesystem::path& path) {
  Tensor t = read_ftz(path);
  if (t.rank() != 2 || t.shape()[0] != 2) {
    throw std::runtime_error("stats file " + path.string() +
                             " must be [2, n_mels], got " +
                             shape_str(t.shape()));
  }
  const std::size_t n = t.shape()[1];
  BinStats stats;
  stats.mean.assign(t.data().begin(), t.data().begin() + n);
  stats.std_dev.assign(t.data().begin() + n, t.data().end());
  return stats;
}

std::vector<AudioClip> segment_clip(const AudioClip& clip, std::size_t count) {
  const std::size_t rate = clip.sample_rate;
  if (clip.samples.size() < count * rate) {
    throw std::invalid_argument(
        "clip too short to cut into " + std::to_string(count) +
        " one-second segments: " + std::to_string(clip.samples.size()) +
        " samples at " + std::to_string(rate) + " Hz");
  }
  std::vector<AudioClip> segments;
  segments.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    AudioClip seg;
    seg.sample_rate = rate;
    seg.samples.assign(clip.samples.begin() + k * rate,
                       clip.samples.begin() + (k + 1) * rate);
    segments.push_back(std::move(seg));
  }
  return segments;
}

}  // namespace msav::dsp
