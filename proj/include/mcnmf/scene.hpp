// include/mcnmf/scene.hpp

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
//
// Synthetic two-channel scene generator: speaker-like sources (glottal
// pulse train + formant resonators + aspiration noise, gated into word
// bursts), angular impulse responses with fractional-delay direct paths and
// velvet-noise exponential reverberation, and convolutive mixtures with
// exact ground-truth stems.

#ifndef MCNMF_SCENE_HPP_
#define MCNMF_SCENE_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include "mcnmf/audio.hpp"
#include "mcnmf/common.hpp"
#include "mcnmf/doa.hpp"
#include "mcnmf/rng.hpp"

namespace mcnmf {

/// Spectral identity of one synthetic speaker.
struct SyntheticSpeakerProfile {
  double pitch = 120.0;                    // Hz
  std::vector<double> formants = {500.0, 1500.0, 2500.0};  // center Hz
  std::vector<double> bandwidths = {80.0, 100.0, 120.0};   // Hz
  double voicing = 0.85;                   // 1 = fully voiced
  std::uint64_t seed = 0;

  void validate() const {
    if (pitch < 70.0 || pitch > 320.0)
      throw ConfigError("SyntheticSpeakerProfile: pitch outside [70, 320] Hz");
    if (formants.empty() || formants.size() != bandwidths.size())
      throw ConfigError("SyntheticSpeakerProfile: formant/bandwidth mismatch");
    for (std::size_t i = 1; i < formants.size(); ++i)
      if (formants[i] <= formants[i - 1])
        throw ConfigError("SyntheticSpeakerProfile: formants must increase");
    if (voicing < 0.0 || voicing > 1.0)
      throw ConfigError("SyntheticSpeakerProfile: voicing outside [0, 1]");
  }
};

/// Scene parameters.
struct SceneConfig {
  int s_count = 3;
  std::vector<double> angles_deg;  // one per source
  double min_separation_deg = 20.0;
  double rt60 = 0.28;              // seconds
  double drr_db = 6.0;             // direct-to-reverberant ratio
  MicArrayGeometry geometry;
  double utterance_length = 1.5;   // seconds
  std::uint64_t seed = 0;

  void validate() const {
    geometry.validate();
    if (s_count < 1) throw ConfigError("SceneConfig: s_count must be >= 1");
    if (static_cast<int>(angles_deg.size()) != s_count)
      throw ConfigError("SceneConfig: angle count does not match s_count");
    for (double a : angles_deg)
      if (std::abs(a) > 90.0)
        throw ConfigError("SceneConfig: angle outside [-90, 90]");
    for (std::size_t i = 0; i < angles_deg.size(); ++i)
      for (std::size_t j = i + 1; j < angles_deg.size(); ++j)
        if (std::abs(angles_deg[i] - angles_deg[j]) < min_separation_deg)
          throw ConfigError("SceneConfig: angles closer than min separation");
    if (rt60 < 0.0 || rt60 >= 2.0)
      throw ConfigError("SceneConfig: rt60 outside [0, 2)");
    if (utterance_length <= 0.0)
      throw ConfigError("SceneConfig: utterance length must be > 0");
  }

  /// Draws s_count angles with pairwise separation (rejection sampling).
  /// The +-60 degree range keeps every angle within the resolution of the
  /// integer-lag TDOA lattice of a 0.15 m pair at 16 kHz (beyond ~60 the
  /// nearest representable angle can be further than 8 degrees away).
  static std::vector<double> draw_angles(int s_count, double min_separation,
                                         std::uint64_t seed) {
    Rng rng(seed, "scene-angles");
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::vector<double> angles;
      for (int s = 0; s < s_count; ++s) angles.push_back(rng.uniform(-60.0, 60.0));
      bool ok = true;
      for (std::size_t i = 0; i < angles.size(); ++i)
        for (std::size_t j = i + 1; j < angles.size(); ++j)
          if (std::abs(angles[i] - angles[j]) < min_separation) ok = false;
      if (ok) return angles;
    }
    throw ConfigError("draw_angles: could not place sources; relax separation");
  }
};

/// Two-microphone impulse response pair.
struct StereoImpulseResponse {
  std::vector<double> mic1, mic2;
};

/// Ground-truth scene bundle.  The mixture is the samplewise sum of the
/// source images, with a fixed accumulation order, so the additivity
/// invariant holds at the bit level.
struct SceneOutput {
  AudioBuffer mixture;                      // 2 channels
  std::vector<AudioBuffer> source_images;   // per source, 2 channels
  std::vector<AudioBuffer> dry_sources;     // per source, 1 channel
  std::vector<double> true_angles_deg;
  std::vector<double> true_tdoas;           // seconds
};

namespace detail {

/// 32-tap Hann-windowed-sinc fractional-delay kernel centered on `delay`
/// (need not be integral); accumulates into out.
inline void add_windowed_sinc(std::vector<double> *out, double delay,
                              double gain) {
  const int half = 16;
  int center = static_cast<int>(std::floor(delay));
  for (int k = center - half + 1; k <= center + half; ++k) {
    if (k < 0 || k >= static_cast<int>(out->size())) continue;
    double t = static_cast<double>(k) - delay;
    double sinc = (t == 0.0) ? 1.0 : std::sin(kPi * t) / (kPi * t);
    double u = (t + half) / (2.0 * half);  // in (0, 1) over the support
    double window = 0.5 * (1.0 - std::cos(2.0 * kPi * u));
    (*out)[k] += gain * sinc * window;
  }
}

/// Full linear convolution; switches to an FFT implementation for large
/// products (identical result up to roundoff).
inline std::vector<double> convolve(const std::vector<double> &x,
                                    const std::vector<double> &h) {
  if (x.empty() || h.empty()) return {};
  std::size_t out_len = x.size() + h.size() - 1;
  if (x.size() * h.size() < (1u << 22)) {
    std::vector<double> y(out_len, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double xi = x[i];
      if (xi == 0.0) continue;
      for (std::size_t j = 0; j < h.size(); ++j) y[i + j] += xi * h[j];
    }
    return y;
  }
  std::size_t nfft = 1;
  while (nfft < out_len) nfft <<= 1;
  std::vector<double> xa(nfft, 0.0), ha(nfft, 0.0);
  std::copy(x.begin(), x.end(), xa.begin());
  std::copy(h.begin(), h.end(), ha.begin());
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<cplx> sx, sh;
  fft.fwd(sx, xa);
  fft.fwd(sh, ha);
  for (std::size_t i = 0; i < sx.size(); ++i) sx[i] *= sh[i];
  std::vector<double> y;
  fft.inv(y, sx, static_cast<int>(nfft));
  y.resize(out_len);
  return y;
}

/// Cascade of two-pole resonators (one per formant), normalized so each
/// stage has roughly unit peak gain.
inline std::vector<double> formant_filter(const std::vector<double> &x,
                                          const SyntheticSpeakerProfile &profile,
                                          int sample_rate) {
  std::vector<double> y = x;
  for (std::size_t m = 0; m < profile.formants.size(); ++m) {
    double r = std::exp(-kPi * profile.bandwidths[m] / sample_rate);
    double theta = 2.0 * kPi * profile.formants[m] / sample_rate;
    double a1 = -2.0 * r * std::cos(theta);
    double a2 = r * r;
    double b0 = (1.0 - r) * std::sqrt(1.0 + r * r - 2.0 * r * std::cos(2.0 * theta));
    double y1 = 0.0, y2 = 0.0;
    for (double &v : y) {
      double out = b0 * v - a1 * y1 - a2 * y2;
      y2 = y1;
      y1 = out;
      v = out;
    }
  }
  return y;
}

inline double rms(const std::vector<double> &x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return std::sqrt(e / std::max<std::size_t>(1, x.size()));
}

}  // namespace detail

/// Synthesizes one speaker-like utterance: a glottal pulse train at the
/// profile pitch (fractional pulse positions rendered with windowed sinc)
/// and an aspiration-noise bed, both shaped by the profile's formant
/// cascade, mixed per the voicing ratio and gated into 2-5 word bursts with
/// raised-cosine edges.  Deterministic in (profile.seed, seed).
inline AudioBuffer synth_utterance(const SyntheticSpeakerProfile &profile,
                                   double length_seconds, std::uint64_t seed,
                                   int sample_rate = 16000) {
  profile.validate();
  if (length_seconds <= 0.0)
    throw ConfigError("synth_utterance: length must be > 0");
  std::size_t n = static_cast<std::size_t>(std::lround(length_seconds * sample_rate));
  Rng rng(derive_seed(seed ^ (profile.seed * 0x9e3779b97f4a7c15ull),
                      "synth-utterance"));

  // Voiced excitation: exact-period pulse train.
  std::vector<double> pulses(n, 0.0);
  double period = static_cast<double>(sample_rate) / profile.pitch;
  for (double t = 2.0 * period * rng.uniform(); t < static_cast<double>(n);
       t += period)
    detail::add_windowed_sinc(&pulses, t, 1.0);
  std::vector<double> voiced = detail::formant_filter(pulses, profile, sample_rate);

  // Unvoiced excitation: white noise through the same resonators.
  std::vector<double> noise(n);
  for (double &v : noise) v = rng.gaussian();
  std::vector<double> unvoiced = detail::formant_filter(noise, profile, sample_rate);

  double rv = detail::rms(voiced), ru = detail::rms(unvoiced);
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t)
    x[t] = profile.voicing * voiced[t] / std::max(rv, kEps) +
           (1.0 - profile.voicing) * unvoiced[t] / std::max(ru, kEps);

  // Word bursts: alternating word/pause stretches with raised-cosine
  // edges, placed sequentially with independently drawn lengths.  The
  // ~45% duty cycle mirrors conversational pausing, and the unsynchronised
  // placement gives each concurrent speaker its own solo stretches, which
  // is what correlation-based counting (and masking-based separation)
  // feed on.  A fixed grid of word slots would be a trap here: speakers
  // drawing the same word count would overlap on every word.
  std::vector<double> envelope(n, 0.0);
  int ramp = sample_rate / 33;  // ~30 ms
  double max_offset = std::min(0.25 * sample_rate, static_cast<double>(n) / 4.0);
  std::size_t cursor = static_cast<std::size_t>(rng.uniform() * max_offset);
  while (cursor < n) {
    std::size_t word =
        static_cast<std::size_t>((0.10 + 0.18 * rng.uniform()) * sample_rate);
    std::size_t start = cursor;
    std::size_t stop = std::min<std::size_t>(n, start + word);
    for (std::size_t t = start; t < stop; ++t) {
      double g = 1.0;
      if (t < start + ramp)
        g = 0.5 * (1.0 - std::cos(kPi * static_cast<double>(t - start) / ramp));
      else if (t + ramp > stop)
        g = 0.5 * (1.0 - std::cos(kPi * static_cast<double>(stop - t) / ramp));
      envelope[t] = std::max(envelope[t], g);
    }
    std::size_t pause =
        static_cast<std::size_t>((0.12 + 0.30 * rng.uniform()) * sample_rate);
    cursor = stop + pause;
  }
  // Equalize by RMS over the active (burst) region rather than by peak:
  // peak normalization would leave low-pitch speakers (sparse glottal
  // pulses, high crest factor) several dB quieter than high-pitch ones.
  double energy = 0.0;
  std::size_t active = 0;
  for (std::size_t t = 0; t < n; ++t) {
    x[t] *= envelope[t];
    if (envelope[t] > 0.1) {
      energy += x[t] * x[t];
      ++active;
    }
  }
  double rms = std::sqrt(energy / std::max<std::size_t>(1, active));
  double gain = 0.13 / std::max(rms, kEps);
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak * gain > 0.95) gain = 0.95 / std::max(peak, kEps);
  for (double &v : x) v *= gain;

  AudioBuffer out;
  out.sample_rate = sample_rate;
  out.channels.push_back(std::move(x));
  return out;
}

/// Generates the two-microphone impulse-response pair for a far-field
/// source at the given angle: each mic receives a 32-tap windowed-sinc
/// direct path at its own fractional delay plus the same velvet-noise
/// exponential tail (so a broadside source produces bitwise-identical
/// RIRs).  The tail's -60 dB time is rt60 and its energy sits drr_db below
/// the direct path.  rt60 = 0 yields the pure anechoic delay pair.
inline StereoImpulseResponse generate_rir(double angle_deg, const SceneConfig &config) {
  config.validate();
  if (std::abs(angle_deg) > 90.0)
    throw ConfigError("generate_rir: angle outside [-90, 90]");
  int sr = config.geometry.sample_rate;
  double tdoa =
      config.geometry.spacing * std::sin(angle_deg * kPi / 180.0) /
      config.geometry.speed_of_sound;                  // mic2 minus mic1, seconds
  const double base = 48.0;                            // common causal offset
  double d1 = base, d2 = base + tdoa * sr;

  std::size_t tail_len =
      config.rt60 > 0.0
          ? static_cast<std::size_t>(std::lround(1.1 * config.rt60 * sr))
          : 0;
  std::size_t len = static_cast<std::size_t>(base) + 32 +
                    config.geometry.max_delay_samples() + tail_len;
  StereoImpulseResponse rir;
  rir.mic1.assign(len, 0.0);
  rir.mic2.assign(len, 0.0);
  detail::add_windowed_sinc(&rir.mic1, d1, 1.0);
  detail::add_windowed_sinc(&rir.mic2, d2, 1.0);

  if (tail_len > 0) {
    // Velvet noise: one +-1 impulse per grid slot, ~1000 slots/second,
    // faded by exp(-6.9078 t / rt60) so the amplitude envelope drops 60 dB
    // at t = rt60.
    char tag[64];
    std::snprintf(tag, sizeof(tag), "rir-tail:%.6f", angle_deg);
    Rng rng(config.seed, tag);
    std::vector<double> tail(tail_len, 0.0);
    double slot = sr / 1000.0;
    double decay = std::log(1e3) / config.rt60;  // amplitude down 60 dB at rt60
    for (double t0 = 0.0; t0 + slot < static_cast<double>(tail_len); t0 += slot) {
      std::size_t pos = static_cast<std::size_t>(t0 + rng.uniform() * slot);
      double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      tail[pos] = sign * std::exp(-decay * pos / sr);
    }
    // Air and surface absorption rise with frequency, so the late field is
    // darker than the direct path: one-pole lowpass at ~2.5 kHz.
    double pole = std::exp(-2.0 * kPi * 2500.0 / sr);
    double state = 0.0;
    for (double &v : tail) {
      state = (1.0 - pole) * v + pole * state;
      v = state;
    }
    double e_direct = 0.0;
    for (double v : rir.mic1) e_direct += v * v;
    double e_tail = 0.0;
    for (double v : tail) e_tail += v * v;
    double scale = std::sqrt(e_direct / (std::max(e_tail, kEps) *
                                         std::pow(10.0, config.drr_db / 10.0)));
    // Tail begins ~2 ms after each direct arrival, delayed per mic.
    double gap = 0.002 * sr;
    for (std::size_t i = 0; i < tail_len; ++i) {
      if (tail[i] == 0.0) continue;
      double g = scale * tail[i];
      std::size_t k1 = i + static_cast<std::size_t>(std::lround(d1 + gap));
      std::size_t k2 = i + static_cast<std::size_t>(std::lround(d2 + gap));
      if (k1 < len) rir.mic1[k1] += g;
      if (k2 < len) rir.mic2[k2] += g;
    }
  }
  return rir;
}

/// Simulates a full scene: per-source dry utterances, per-source stereo
/// images (dry convolved with the angle's RIR), and their sum as the
/// mixture.  If the mixture would clip, mixture and images are rescaled by
/// one common gain (warned) and the mixture is re-summed so additivity
/// stays exact.
inline SceneOutput simulate_scene(const std::vector<SyntheticSpeakerProfile> &profiles,
                                  const SceneConfig &config) {
  config.validate();
  if (static_cast<int>(profiles.size()) != config.s_count)
    throw ConfigError("simulate_scene: profile count does not match s_count");
  int sr = config.geometry.sample_rate;

  SceneOutput out;
  out.true_angles_deg = config.angles_deg;
  for (double a : config.angles_deg)
    out.true_tdoas.push_back(config.geometry.spacing * std::sin(a * kPi / 180.0) /
                             config.geometry.speed_of_sound);

  std::size_t image_len = 0;
  for (int s = 0; s < config.s_count; ++s) {
    AudioBuffer dry = synth_utterance(
        profiles[s], config.utterance_length,
        derive_seed(config.seed, "scene-utterance-" + std::to_string(s)), sr);
    StereoImpulseResponse rir = generate_rir(config.angles_deg[s], config);
    AudioBuffer image;
    image.sample_rate = sr;
    image.channels.push_back(detail::convolve(dry.channels[0], rir.mic1));
    image.channels.push_back(detail::convolve(dry.channels[0], rir.mic2));
    image_len = std::max(image_len, image.channels[0].size());
    out.dry_sources.push_back(std::move(dry));
    out.source_images.push_back(std::move(image));
  }
  // Equalize image lengths (RIR lengths are equal, but keep this robust).
  for (auto &image : out.source_images)
    for (auto &ch : image.channels) ch.resize(image_len, 0.0);

  auto sum_images = [&]() {
    out.mixture.sample_rate = sr;
    out.mixture.channels.assign(2, std::vector<double>(image_len, 0.0));
    for (int s = 0; s < config.s_count; ++s)
      for (int i = 0; i < 2; ++i)
        for (std::size_t t = 0; t < image_len; ++t)
          out.mixture.channels[i][t] += out.source_images[s].channels[i][t];
  };
  sum_images();

  double peak = 0.0;
  for (const auto &ch : out.mixture.channels)
    for (double v : ch) peak = std::max(peak, std::abs(v));
  if (peak > 1.0) {
    std::cerr << "simulate_scene: warning: mixture peak " << peak
              << " clips; rescaling mixture and images by " << 1.0 / peak << "\n";
    for (auto &image : out.source_images)
      for (auto &ch : image.channels)
        for (double &v : ch) v /= peak;
    sum_images();  // re-sum so additivity stays exact
  }
  return out;
}

/// Log-spaced distinct speaker profiles over pitch [95, 260] Hz with
/// seeded formant layouts; the spectral signatures are what the
/// factorization exploits, so every profile gets its own formant pattern.
inline std::vector<SyntheticSpeakerProfile> make_speaker_profiles(
    int count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("make_speaker_profiles: count must be >= 1");
  std::vector<SyntheticSpeakerProfile> profiles;
  Rng rng(seed, "speaker-profiles");
  for (int i = 0; i < count; ++i) {
    SyntheticSpeakerProfile p;
    double u = count == 1 ? 0.5 : static_cast<double>(i) / (count - 1);
    p.pitch = 95.0 * std::pow(260.0 / 95.0, u) * (1.0 + 0.03 * rng.uniform(-1.0, 1.0));
    double f1 = rng.uniform(320.0, 780.0);
    double f2 = f1 + rng.uniform(450.0, 1200.0);
    double f3 = f2 + rng.uniform(600.0, 1200.0);
    p.formants = {f1, f2, f3};
    p.bandwidths = {rng.uniform(60.0, 100.0), rng.uniform(80.0, 130.0),
                    rng.uniform(100.0, 160.0)};
    p.voicing = rng.uniform(0.75, 0.95);
    p.seed = derive_seed(seed, "profile-" + std::to_string(i));
    profiles.push_back(p);
  }
  return profiles;
}

/// Writes a scene as WAV stems plus a JSON manifest into a directory.
inline void save_scene(const SceneOutput &scene, const SceneConfig &config,
                       const std::string &directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  fs::path dir(directory);
  save_wav(scene.mixture, (dir / "mixture.wav").string());
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["sample_rate"] = scene.mixture.sample_rate;
  manifest["seed"] = config.seed;
  manifest["rt60"] = config.rt60;
  manifest["drr_db"] = config.drr_db;
  manifest["utterance_length"] = config.utterance_length;
  manifest["geometry"] = {{"spacing", config.geometry.spacing},
                          {"speed_of_sound", config.geometry.speed_of_sound}};
  manifest["true_angles_deg"] = scene.true_angles_deg;
  manifest["true_tdoas_sec"] = scene.true_tdoas;
  manifest["sources"] = nlohmann::json::array();
  for (std::size_t s = 0; s < scene.source_images.size(); ++s) {
    std::string image_name = "image" + std::to_string(s + 1) + ".wav";
    std::string dry_name = "dry" + std::to_string(s + 1) + ".wav";
    save_wav(scene.source_images[s], (dir / image_name).string());
    save_wav(scene.dry_sources[s], (dir / dry_name).string());
    manifest["sources"].push_back({{"image", image_name},
                                   {"dry", dry_name},
                                   {"angle_deg", scene.true_angles_deg[s]},
                                   {"tdoa_sec", scene.true_tdoas[s]}});
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("save_scene: cannot write manifest");
  os << manifest.dump(1) << "\n";
}

}  // namespace mcnmf

#endif  // MCNMF_SCENE_HPP_
