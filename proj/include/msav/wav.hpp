#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace msav {

struct AudioClip {
  std::vector<float> samples;  // mono, nominally in [-1, 1]
  std::size_t sample_rate = 0;
};

/// Reads a RIFF/WAVE PCM 16-bit file; stereo input is averaged to mono.
AudioClip read_wav(const std::filesystem::path& path);

/// Writes a mono PCM 16-bit WAV (samples clipped to [-1, 1]).
void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip);

}  // namespace msav
