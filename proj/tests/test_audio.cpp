// tests/test_audio.cpp

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

#include "mcnmf/audio.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "catch_amalgamated.hpp"
#include "mcnmf/rng.hpp"

namespace {

std::string temp_path(const std::string &name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Writes a little-endian WAV file byte-by-byte, independent of save_wav,
// so load_wav is checked against the format definition rather than against
// our own writer.
void write_raw_pcm16_wav(const std::string &path, int sample_rate,
                         int channels, const std::vector<std::int16_t> &interleaved) {
  std::string out;
  auto u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  auto u16 = [&out](std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  std::uint32_t data_size = static_cast<std::uint32_t>(2 * interleaved.size());
  out.append("RIFF");
  u32(36 + data_size);
  out.append("WAVEfmt ");
  u32(16);
  u16(1);  // PCM
  u16(static_cast<std::uint16_t>(channels));
  u32(static_cast<std::uint32_t>(sample_rate));
  u32(static_cast<std::uint32_t>(sample_rate * channels * 2));
  u16(static_cast<std::uint16_t>(channels * 2));
  u16(16);
  out.append("data");
  u32(data_size);
  for (std::int16_t v : interleaved)
    u16(static_cast<std::uint16_t>(v));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace

TEST_CASE("load_wav: silence maps to zeros", "[audio]") {
  std::string path = temp_path("mcnmf_silence.wav");
  write_raw_pcm16_wav(path, 16000, 1, std::vector<std::int16_t>(16000, 0));
  mcnmf::AudioBuffer buf = mcnmf::load_wav(path);
  REQUIRE(buf.sample_rate == 16000);
  REQUIRE(buf.channel_count() == 1);
  REQUIRE(buf.length() == 16000);
  for (double v : buf.channels[0]) REQUIRE(v == 0.0);
}

TEST_CASE("load_wav: PCM-16 scaling convention", "[audio]") {
  std::string path = temp_path("mcnmf_pcm_scale.wav");
  write_raw_pcm16_wav(path, 8000, 1, {32767, -32768, 1, -1, 0, 16384});
  mcnmf::AudioBuffer buf = mcnmf::load_wav(path);
  REQUIRE(buf.channels[0][0] == Catch::Approx(32767.0 / 32768.0).epsilon(0));
  REQUIRE(buf.channels[0][1] == -1.0);
  REQUIRE(buf.channels[0][2] == Catch::Approx(1.0 / 32768.0).epsilon(0));
  REQUIRE(buf.channels[0][3] == Catch::Approx(-1.0 / 32768.0).epsilon(0));
  REQUIRE(buf.channels[0][4] == 0.0);
  REQUIRE(buf.channels[0][5] == 0.5);
}

TEST_CASE("load_wav: stereo gives two equal-length channels", "[audio]") {
  std::string path = temp_path("mcnmf_stereo.wav");
  // Interleaved L R L R ...; L ramps up, R ramps down.
  std::vector<std::int16_t> data;
  for (int t = 0; t < 100; ++t) {
    data.push_back(static_cast<std::int16_t>(t));
    data.push_back(static_cast<std::int16_t>(-t));
  }
  write_raw_pcm16_wav(path, 44100, 2, data);
  mcnmf::AudioBuffer buf = mcnmf::load_wav(path);
  REQUIRE(buf.channel_count() == 2);
  REQUIRE(buf.channels[0].size() == 100);
  REQUIRE(buf.channels[1].size() == 100);
  REQUIRE(buf.channels[0][50] == Catch::Approx(50.0 / 32768.0).epsilon(0));
  REQUIRE(buf.channels[1][50] == Catch::Approx(-50.0 / 32768.0).epsilon(0));
}

TEST_CASE("save_wav/load_wav: float32 round-trip is bit-exact", "[audio]") {
  mcnmf::Rng rng(42, "audio-test");
  mcnmf::AudioBuffer buf(16000, 2, 1234);
  for (auto &ch : buf.channels)
    for (auto &v : ch) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::string path = temp_path("mcnmf_f32_roundtrip.wav");
  mcnmf::save_wav(buf, path, mcnmf::WavFormat::kFloat32);
  mcnmf::AudioBuffer back = mcnmf::load_wav(path);
  REQUIRE(back.sample_rate == buf.sample_rate);
  REQUIRE(back.channel_count() == 2);
  REQUIRE(back.length() == buf.length());
  for (int c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < buf.length(); ++t)
      REQUIRE(back.channels[c][t] == buf.channels[c][t]);
}

TEST_CASE("save_wav/load_wav: PCM-16 round-trip within one quantization step", "[audio]") {
  mcnmf::Rng rng(7, "audio-test");
  mcnmf::AudioBuffer buf(16000, 1, 5000);
  for (auto &v : buf.channels[0]) v = rng.uniform(-1.0, 1.0);
  std::string path = temp_path("mcnmf_pcm_roundtrip.wav");
  mcnmf::save_wav(buf, path, mcnmf::WavFormat::kPcm16);
  mcnmf::AudioBuffer back = mcnmf::load_wav(path);
  double max_err = 0.0;
  for (std::size_t t = 0; t < buf.length(); ++t)
    max_err = std::max(max_err, std::abs(back.channels[0][t] - buf.channels[0][t]));
  REQUIRE(max_err <= std::pow(2.0, -15.0));
}

TEST_CASE("save_wav: empty buffer round-trips to empty buffer", "[audio]") {
  mcnmf::AudioBuffer buf(16000, 1, 0);
  std::string path = temp_path("mcnmf_empty.wav");
  mcnmf::save_wav(buf, path, mcnmf::WavFormat::kPcm16);
  mcnmf::AudioBuffer back = mcnmf::load_wav(path);
  REQUIRE(back.channel_count() == 1);
  REQUIRE(back.length() == 0);
}

TEST_CASE("save_wav: non-finite samples are rejected", "[audio]") {
  mcnmf::AudioBuffer buf(16000, 1, 10);
  buf.channels[0][5] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(mcnmf::save_wav(buf, temp_path("mcnmf_nan.wav")), mcnmf::DataError);
  buf.channels[0][5] = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(mcnmf::save_wav(buf, temp_path("mcnmf_inf.wav")), mcnmf::DataError);
}

TEST_CASE("load_wav: malformed and unsupported files are rejected", "[audio]") {
  std::string garbage = temp_path("mcnmf_garbage.wav");
  {
    std::ofstream os(garbage, std::ios::binary);
    os << "this is not a wav file at all";
  }
  REQUIRE_THROWS_AS(mcnmf::load_wav(garbage), mcnmf::FormatError);

  // Valid RIFF wrapper but mu-law encoding (format tag 7).
  std::string mulaw = temp_path("mcnmf_mulaw.wav");
  {
    std::string out;
    auto u32 = [&out](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    auto u16 = [&out](std::uint16_t v) {
      for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    out.append("RIFF");
    u32(36 + 4);
    out.append("WAVEfmt ");
    u32(16);
    u16(7);  // mu-law
    u16(1);
    u32(8000);
    u32(8000);
    u16(1);
    u16(8);
    out.append("data");
    u32(4);
    out.append("\0\0\0\0", 4);
    std::ofstream os(mulaw, std::ios::binary);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
  }
  REQUIRE_THROWS_AS(mcnmf::load_wav(mulaw), mcnmf::FormatError);

  REQUIRE_THROWS_AS(mcnmf::load_wav(temp_path("mcnmf_does_not_exist.wav")),
                    mcnmf::IoError);
}
