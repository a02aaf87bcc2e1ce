// include/mcnmf/audio.hpp

// Copyright 2026  mcnmf contributors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MCNMF_AUDIO_HPP_
#define MCNMF_AUDIO_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mcnmf/common.hpp"

namespace mcnmf {

/// Multichannel audio held as one sample vector per channel, amplitudes
/// nominally in [-1, 1].
struct AudioBuffer {
  int sample_rate = 0;
  std::vector<std::vector<double>> channels;

  AudioBuffer() = default;
  AudioBuffer(int rate, int channel_count, std::size_t length)
      : sample_rate(rate),
        channels(channel_count, std::vector<double>(length, 0.0)) {}

  int channel_count() const { return static_cast<int>(channels.size()); }

  std::size_t length() const {
    return channels.empty() ? 0 : channels.front().size();
  }

  /// Checks the equal-length invariant; throws ShapeError on violation.
  void validate() const {
    if (sample_rate <= 0) throw ShapeError("AudioBuffer: sample_rate must be positive");
    for (const auto &ch : channels) {
      if (ch.size() != length())
        throw ShapeError("AudioBuffer: channels have unequal lengths");
    }
  }
};

/// Sample encodings supported for WAV files.
enum class WavFormat {
  kPcm16,    // 16-bit signed PCM
  kFloat32,  // 32-bit IEEE float
};

namespace detail {

inline std::uint32_t read_u32(const unsigned char *p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char *p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void write_u32(std::uint32_t v, std::string *out) {
  out->push_back(static_cast<char>(v & 0xff));
  out->push_back(static_cast<char>((v >> 8) & 0xff));
  out->push_back(static_cast<char>((v >> 16) & 0xff));
  out->push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void write_u16(std::uint16_t v, std::string *out) {
  out->push_back(static_cast<char>(v & 0xff));
  out->push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

/// Reads a RIFF/WAVE file.  PCM-16 samples are scaled by 1/32768 so the
/// full negative swing maps to -1.0; float32 samples are taken verbatim.
/// Throws FormatError for malformed headers or any encoding other than
/// PCM-16 / IEEE-float32, IoError if the file cannot be read.
inline AudioBuffer load_wav(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_wav: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const unsigned char *p = reinterpret_cast<const unsigned char *>(bytes.data());
  std::size_t size = bytes.size();
  if (size < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError("load_wav: not a RIFF/WAVE file: " + path);

  bool have_fmt = false;
  std::uint16_t format_tag = 0, channel_count = 0, bits_per_sample = 0;
  std::uint32_t sample_rate = 0;
  const unsigned char *data = nullptr;
  std::uint32_t data_size = 0;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= size) {
    const unsigned char *chunk_id = p + pos;
    std::uint32_t chunk_size = detail::read_u32(p + pos + 4);
    pos += 8;
    if (pos + chunk_size > size)
      throw FormatError("load_wav: truncated chunk in " + path);
    if (std::memcmp(chunk_id, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw FormatError("load_wav: fmt chunk too small");
      format_tag = detail::read_u16(p + pos);
      channel_count = detail::read_u16(p + pos + 2);
      sample_rate = detail::read_u32(p + pos + 4);
      bits_per_sample = detail::read_u16(p + pos + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk_id, "data", 4) == 0) {
      data = p + pos;
      data_size = chunk_size;
      have_data = true;
    }
    pos += chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  if (!have_fmt || !have_data)
    throw FormatError("load_wav: missing fmt or data chunk in " + path);
  if (channel_count == 0 || sample_rate == 0)
    throw FormatError("load_wav: invalid fmt fields in " + path);

  bool pcm16 = (format_tag == 1 && bits_per_sample == 16);
  bool float32 = (format_tag == 3 && bits_per_sample == 32);
  if (!pcm16 && !float32)
    throw FormatError("load_wav: unsupported encoding (format tag " +
                      std::to_string(format_tag) + ", " +
                      std::to_string(bits_per_sample) + " bit) in " + path);

  std::size_t bytes_per_sample = pcm16 ? 2 : 4;
  std::size_t frame_bytes = bytes_per_sample * channel_count;
  std::size_t frames = frame_bytes == 0 ? 0 : data_size / frame_bytes;

  AudioBuffer buf(static_cast<int>(sample_rate), channel_count, frames);
  for (std::size_t t = 0; t < frames; ++t) {
    for (int c = 0; c < channel_count; ++c) {
      const unsigned char *s = data + t * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        std::int16_t v = static_cast<std::int16_t>(detail::read_u16(s));
        buf.channels[c][t] = static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::uint32_t raw = detail::read_u32(s);
        std::memcpy(&v, &raw, 4);
        buf.channels[c][t] = static_cast<double>(v);
      }
    }
  }
  return buf;
}

/// Writes a RIFF/WAVE file.  PCM-16 rounds to the nearest step of 1/32768
/// and clamps to the representable range, so round-trip error is at most
/// 2^-15 per sample; float32 is lossless for values that fit in a float.
/// Throws DataError on non-finite samples, IoError on write failure.
inline void save_wav(const AudioBuffer &buffer, const std::string &path,
                     WavFormat format = WavFormat::kFloat32) {
  buffer.validate();
  int channel_count = buffer.channel_count();
  if (channel_count == 0)
    throw DataError("save_wav: buffer has no channels");
  std::size_t frames = buffer.length();
  for (const auto &ch : buffer.channels)
    for (double v : ch)
      if (!std::isfinite(v)) throw DataError("save_wav: non-finite sample");

  std::uint16_t bits = (format == WavFormat::kPcm16) ? 16 : 32;
  std::uint16_t tag = (format == WavFormat::kPcm16) ? 1 : 3;
  std::uint32_t frame_bytes = static_cast<std::uint32_t>(channel_count) * bits / 8;
  std::uint32_t data_size = static_cast<std::uint32_t>(frames) * frame_bytes;

  std::string out;
  out.reserve(44 + data_size);
  out.append("RIFF");
  detail::write_u32(36 + data_size, &out);
  out.append("WAVE");
  out.append("fmt ");
  detail::write_u32(16, &out);
  detail::write_u16(tag, &out);
  detail::write_u16(static_cast<std::uint16_t>(channel_count), &out);
  detail::write_u32(static_cast<std::uint32_t>(buffer.sample_rate), &out);
  detail::write_u32(static_cast<std::uint32_t>(buffer.sample_rate) * frame_bytes, &out);
  detail::write_u16(static_cast<std::uint16_t>(frame_bytes), &out);
  detail::write_u16(bits, &out);
  out.append("data");
  detail::write_u32(data_size, &out);

  for (std::size_t t = 0; t < frames; ++t) {
    for (int c = 0; c < channel_count; ++c) {
      double v = buffer.channels[c][t];
      if (format == WavFormat::kPcm16) {
        long q = std::lround(v * 32768.0);
        q = std::clamp(q, -32768l, 32767l);
        detail::write_u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)), &out);
      } else {
        float f = static_cast<float>(v);
        std::uint32_t raw;
        std::memcpy(&raw, &f, 4);
        detail::write_u32(raw, &out);
      }
    }
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_wav: cannot open " + path + " for writing");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw IoError("save_wav: write failed for " + path);
}

}  // namespace mcnmf

#endif  // MCNMF_AUDIO_HPP_
