#include "msav/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace msav {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] |
                                    (static_cast<std::uint16_t>(p[1]) << 8));
}

void wr_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF),
               static_cast<char>((v >> 24) & 0xFF)};
  os.write(b, 4);
}

void wr_u16(std::ostream& os, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  os.write(b, 2);
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot open WAV file " + path.string());
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error("not a RIFF/WAVE file: " + path.string());
  }

  std::uint16_t channels = 0;
  std::uint16_t bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t chunk_len = rd_u32(hdr + 4);
    const unsigned char* body = hdr + 8;
    if (pos + 8 + chunk_len > bytes.size()) {
      throw std::runtime_error("truncated WAV chunk in " + path.string());
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) {
        throw std::runtime_error("malformed fmt chunk in " + path.string());
      }
      const std::uint16_t format = rd_u16(body);
      if (format != 1) {
        throw std::runtime_error("unsupported WAV format tag " +
                                 std::to_string(format) + " in " +
                                 path.string() + " (PCM required)");
      }
      channels = rd_u16(body + 2);
      rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data == nullptr) {
    throw std::runtime_error("missing fmt/data chunk in " + path.string());
  }
  if (bits != 16) {
    throw std::runtime_error("unsupported bit depth " + std::to_string(bits) +
                             " in " + path.string() + " (16-bit required)");
  }
  if (channels != 1 && channels != 2) {
    throw std::runtime_error("unsupported channel count " +
                             std::to_string(channels) + " in " + path.string());
  }

  const std::size_t n_frames = data_len / (2 * channels);
  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(n_frames);
  constexpr float kScale = 1.0f / 32768.0f;
  for (std::size_t i = 0; i < n_frames; ++i) {
    if (channels == 1) {
      const auto v = static_cast<std::int16_t>(rd_u16(data + 2 * i));
      clip.samples[i] = static_cast<float>(v) * kScale;
    } else {
      const auto l = static_cast<std::int16_t>(rd_u16(data + 4 * i));
      const auto r = static_cast<std::int16_t>(rd_u16(data + 4 * i + 2));
      clip.samples[i] =
          0.5f * (static_cast<float>(l) + static_cast<float>(r)) * kScale;
    }
  }
  return clip;
}

void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_len = n * 2;
  os.write("RIFF", 4);
  wr_u32(os, 36 + data_len);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  wr_u32(os, 16);
  wr_u16(os, 1);  // PCM
  wr_u16(os, 1);  // mono
  wr_u32(os, static_cast<std::uint32_t>(clip.sample_rate));
  wr_u32(os, static_cast<std::uint32_t>(clip.sample_rate * 2));
  wr_u16(os, 2);   // block align
  wr_u16(os, 16);  // bits
  os.write("data", 4);
  wr_u32(os, data_len);
  for (float v : clip.samples) {
    const float c = std::clamp(v, -1.0f, 1.0f);
    const auto q = static_cast<std::int16_t>(std::lrintf(c * 32767.0f));
    wr_u16(os, static_cast<std::uint16_t>(q));
  }
  if (!os) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

}  // namespace msav
