// include/mcnmf/stft.hpp

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

#ifndef MCNMF_STFT_HPP_
#define MCNMF_STFT_HPP_

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "mcnmf/audio.hpp"
#include "mcnmf/common.hpp"

namespace mcnmf {

/// Analysis/synthesis window shapes.  The same window is applied on both
/// sides, so perfect reconstruction requires the squared window to satisfy
/// constant overlap-add at the configured hop.
enum class Window {
  kSqrtHann,  // square root of the periodic Hann window (COLA at 50% overlap)
  kRect,      // rectangular (COLA when hop divides the window length)
};

/// Time-frequency analysis parameters.  Defaults give a 64 ms window with a
/// 32 ms hop, i.e. 1024-point frames with 50% overlap at 16 kHz.
struct StftConfig {
  double window_length_ms = 64.0;
  double hop_length_ms = 32.0;
  Window window = Window::kSqrtHann;
  /// FFT length in samples; 0 selects the window length rounded up to the
  /// next power of two.  Must be >= the window length when given explicitly.
  int fft_size = 0;

  int window_samples(int sample_rate) const {
    return static_cast<int>(std::lround(window_length_ms * sample_rate / 1000.0));
  }

  int hop_samples(int sample_rate) const {
    return static_cast<int>(std::lround(hop_length_ms * sample_rate / 1000.0));
  }

  int effective_fft_size(int sample_rate) const {
    int w = window_samples(sample_rate);
    if (fft_size > 0) {
      if (fft_size < w)
        throw ConfigError("StftConfig: fft_size smaller than window length");
      return fft_size;
    }
    int n = 1;
    while (n < w) n <<= 1;
    return n;
  }

  void validate(int sample_rate) const {
    int w = window_samples(sample_rate);
    int h = hop_samples(sample_rate);
    if (w <= 0 || h <= 0)
      throw ConfigError("StftConfig: window and hop must be positive");
    if (h > w) throw ConfigError("StftConfig: hop exceeds window length");
    (void)effective_fft_size(sample_rate);
  }
};

/// One-sided complex STFT, F = fft_size/2 + 1 rows by N frames.
struct ComplexSpectrogram {
  CMat data;  // F x N
  StftConfig config;
  int sample_rate = 0;

  int bins() const { return static_cast<int>(data.rows()); }
  int frames() const { return static_cast<int>(data.cols()); }

  /// Center frequency of bin f in Hz.
  double bin_frequency(int f) const {
    return static_cast<double>(f) * sample_rate /
           config.effective_fft_size(sample_rate);
  }
};

/// Elementwise squared magnitudes of a complex spectrogram.
struct PowerSpectrogram {
  Mat data;  // F x N, entries >= 0

  int bins() const { return static_cast<int>(data.rows()); }
  int frames() const { return static_cast<int>(data.cols()); }
};

namespace detail {

inline std::vector<double> make_window(Window shape, int length) {
  std::vector<double> w(length, 1.0);
  if (shape == Window::kSqrtHann) {
    for (int i = 0; i < length; ++i) {
      double hann = 0.5 - 0.5 * std::cos(2.0 * kPi * i / length);
      w[i] = std::sqrt(hann);
    }
  }
  return w;
}

/// Maximum relative deviation of the squared-window overlap-add profile
/// from its mean, evaluated over one hop period (the profile is periodic
/// in the interior of any long signal).
inline double cola_deviation(const std::vector<double> &window, int hop) {
  int length = static_cast<int>(window.size());
  std::vector<double> profile(hop, 0.0);
  for (int r = 0; r < hop; ++r)
    for (int i = r; i < length; i += hop) profile[r] += window[i] * window[i];
  double mean = 0.0;
  for (double v : profile) mean += v;
  mean /= hop;
  if (mean <= 0.0) return 1.0;
  double dev = 0.0;
  for (double v : profile) dev = std::max(dev, std::abs(v / mean - 1.0));
  return dev;
}

inline void check_cola(const std::vector<double> &window, int hop) {
  if (cola_deviation(window, hop) >= 1e-6)
    throw ConfigError("StftConfig: window/hop pair does not satisfy COLA");
}

}  // namespace detail

/// STFT of a single channel.  The signal is reflect-padded by half a window
/// at both ends, so the frame count is N = ceil(length/hop) + 1 and every
/// original sample receives full analysis-synthesis weight in the round
/// trip.  Throws DataError if the signal is shorter than one window.
inline ComplexSpectrogram stft(const std::vector<double> &samples,
                               int sample_rate, const StftConfig &config) {
  config.validate(sample_rate);
  int win = config.window_samples(sample_rate);
  int hop = config.hop_samples(sample_rate);
  int nfft = config.effective_fft_size(sample_rate);
  std::vector<double> window = detail::make_window(config.window, win);
  detail::check_cola(window, hop);

  std::size_t length = samples.size();
  if (length < static_cast<std::size_t>(win))
    throw DataError("stft: signal shorter than one window");

  int frames = static_cast<int>((length + hop - 1) / hop) + 1;
  int half = win / 2;
  std::size_t padded_length =
      std::max<std::size_t>(length + 2 * half,
                            static_cast<std::size_t>(frames - 1) * hop + win);
  std::vector<double> padded(padded_length, 0.0);
  // Reflect padding without repeating the edge sample.
  for (int i = 0; i < half; ++i)
    padded[i] = samples[std::min<std::size_t>(half - i, length - 1)];
  std::copy(samples.begin(), samples.end(), padded.begin() + half);
  // Reflect at most half a window on the right; anything beyond stays zero.
  std::size_t right = std::min<std::size_t>(half, padded_length - length - half);
  for (std::size_t i = 0; i < right; ++i) {
    std::size_t src = (i + 2 <= length) ? length - 2 - i : 0;
    padded[half + length + i] = samples[src];
  }

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  int bins = nfft / 2 + 1;
  ComplexSpectrogram spec;
  spec.data = CMat::Zero(bins, frames);
  spec.config = config;
  spec.sample_rate = sample_rate;

  std::vector<double> frame(nfft, 0.0);
  std::vector<cplx> out(bins);
  for (int m = 0; m < frames; ++m) {
    const double *src = padded.data() + static_cast<std::size_t>(m) * hop;
    for (int i = 0; i < win; ++i) frame[i] = src[i] * window[i];
    std::fill(frame.begin() + win, frame.end(), 0.0);
    fft.fwd(out, frame);
    for (int f = 0; f < bins; ++f) spec.data(f, m) = out[f];
  }
  return spec;
}

/// Convenience overload: transforms one channel of a buffer.
inline ComplexSpectrogram stft(const AudioBuffer &buffer, int channel,
                               const StftConfig &config) {
  if (channel < 0 || channel >= buffer.channel_count())
    throw ShapeError("stft: channel index out of range");
  return stft(buffer.channels[channel], buffer.sample_rate, config);
}

/// Inverse STFT by weighted overlap-add with the same window used for
/// analysis.  Returns (N-1)*hop samples, which covers the original signal
/// length; callers that know the original length crop the tail.  Throws
/// ConfigError if the configuration does not satisfy COLA.
inline std::vector<double> istft(const ComplexSpectrogram &spec) {
  const StftConfig &config = spec.config;
  config.validate(spec.sample_rate);
  int win = config.window_samples(spec.sample_rate);
  int hop = config.hop_samples(spec.sample_rate);
  int nfft = config.effective_fft_size(spec.sample_rate);
  if (spec.bins() != nfft / 2 + 1)
    throw ShapeError("istft: bin count does not match fft_size/2 + 1");
  std::vector<double> window = detail::make_window(config.window, win);
  detail::check_cola(window, hop);

  int frames = spec.frames();
  int half = win / 2;
  std::size_t padded_length = static_cast<std::size_t>(frames - 1) * hop + win;
  std::vector<double> acc(padded_length, 0.0);
  std::vector<double> weight(padded_length, 0.0);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<cplx> in(spec.bins());
  std::vector<double> frame(nfft);
  for (int m = 0; m < frames; ++m) {
    for (int f = 0; f < spec.bins(); ++f) in[f] = spec.data(f, m);
    fft.inv(frame, in, nfft);
    double *dst = acc.data() + static_cast<std::size_t>(m) * hop;
    double *wgt = weight.data() + static_cast<std::size_t>(m) * hop;
    for (int i = 0; i < win; ++i) {
      dst[i] += frame[i] * window[i];
      wgt[i] += window[i] * window[i];
    }
  }

  std::size_t out_length = static_cast<std::size_t>(frames - 1) * hop;
  std::vector<double> out(out_length, 0.0);
  for (std::size_t i = 0; i < out_length; ++i) {
    double w = weight[i + half];
    out[i] = (w > kEps) ? acc[i + half] / w : 0.0;
  }
  return out;
}

/// Elementwise |.|^2 of a complex spectrogram.
inline PowerSpectrogram power_spectrogram(const ComplexSpectrogram &spec) {
  PowerSpectrogram p;
  p.data = spec.data.cwiseAbs2();
  return p;
}

}  // namespace mcnmf

#endif  // MCNMF_STFT_HPP_
