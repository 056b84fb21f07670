#pragma once

#include <span>
#include <vector>

#include "msav/tensor.hpp"
#include "msav/wav.hpp"

namespace msav::dsp {

enum class LogBase { natural, decibel };

struct MelConfig {
  std::size_t target_rate = 22050;
  std::size_t n_fft = 2048;  // also the analysis window length
  std::size_t hop = 368;
  std::size_t n_mels = 128;
  double fmin = 0.0;
  double fmax = 11025.0;
  float log_floor = 1e-10f;
  LogBase log_base = LogBase::natural;
};

/// Scales samples by 1/max|x|; silence is returned unchanged.
AudioClip peak_normalize(AudioClip clip);

/// Linear-interpolation resampler; output length is round(n * target/source).
AudioClip resample_linear(const AudioClip& clip, std::size_t target_rate);

/// Log mel spectrogram [n_frames, n_mels] with n_frames = 1 + floor(n/hop).
/// Hann window, centered frames with reflect padding, power spectrum,
/// triangular Slaney-normalized filters on the HTK mel scale, log of
/// max(value, log_floor). The clip must already be at cfg.target_rate.
Tensor log_mel(const AudioClip& clip, const MelConfig& cfg);

/// Per-frequency-bin statistics over a set of training spectrograms.
struct BinStats {
  std::vector<float> mean;
  std::vector<float> std_dev;
  float eps = 1e-8f;
};

BinStats fit_bin_stats(std::span<const Tensor> spectrograms);

/// (x - mean) / (std + eps), per bin.
Tensor standardize(const Tensor& spectrogram, const BinStats& stats);

/// Persist as a rank-2 [2, n_mels] tensor: row 0 mean, row 1 std.
void save_bin_stats(const BinStats& stats, const std::filesystem::path& path);
BinStats load_bin_stats(const std::filesystem::path& path);

/// Cuts the first `count` seconds into contiguous one-second segments.
std::vector<AudioClip> segment_clip(const AudioClip& clip,
                                    std::size_t count = 10);

/// Triangular mel filterbank, row-major [n_mels, n_fft/2 + 1].
std::vector<float> mel_filterbank(const MelConfig& cfg);

/// Center frequency (Hz) of each mel filter.
std::vector<double> mel_center_freqs(const MelConfig& cfg);

}  // namespace msav::dsp
