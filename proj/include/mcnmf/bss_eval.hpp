// include/mcnmf/bss_eval.hpp

// Copyright 2026  mcnmf contributors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Separation quality metrics (SDR / SIR / SAR) from the standard
// orthogonal-projection decomposition, plus recognition scoring.
//
// Each estimate is decomposed against the set of reference sources as
//
//   estimate = s_target + e_interf + e_artif
//
// where s_target is the orthogonal projection of the estimate onto the
// subspace spanned by delayed copies (0..L-1 samples, L = 512 taps) of its
// own reference — so any filtering within that allowance counts as the
// wanted signal, not as distortion — e_interf extends the projection to the
// span of all references' delays, and e_artif is what no filtered
// combination of references can explain.  The three parts are mutually
// orthogonal and sum to the (zero-padded) estimate, giving
//
//   SDR = 10 log10 |s_target|^2 / |e_interf + e_artif|^2
//   SIR = 10 log10 |s_target|^2 / |e_interf|^2
//   SAR = 10 log10 |s_target + e_interf|^2 / |e_artif|^2.
//
// Estimates are paired with references by spatial position index, not by a
// best-metric permutation search: the model ties sources to positions, and
// metric-optimal pairing would mask identification errors.  Multichannel
// signals are evaluated on channel 1.  Infinite ratios are reported as
// +/-200 dB sentinels so scores stay serializable.

#ifndef MCNMF_BSS_EVAL_HPP_
#define MCNMF_BSS_EVAL_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include "mcnmf/audio.hpp"
#include "mcnmf/common.hpp"

namespace mcnmf {

/// Allowed-distortion filter length in taps (at 16 kHz sample rate).
constexpr int kBssFilterTaps = 512;

/// Ratios whose numerator or denominator vanishes are reported as -/+ this
/// many dB.  Ratios beyond it are solver-noise territory for doubles, so
/// finite values are clamped to the same bound.
constexpr double kDbSentinel = 200.0;

/// Per-source separation ratios in dB, one entry per estimated source.
struct SeparationScores {
  std::vector<double> sdr;
  std::vector<double> sir;
  std::vector<double> sar;

  int source_count() const { return static_cast<int>(sdr.size()); }

  nlohmann::json to_json() const {
    return nlohmann::json{{"sdr_db", sdr}, {"sir_db", sir}, {"sar_db", sar}};
  }
};

/// Position-level recognition quality.  confusion(i, j) counts positions
/// whose true speaker i was assigned label j; row sums therefore equal the
/// number of scored positions per true speaker.
struct RecognitionScores {
  double accuracy = 0.0;
  double speaker_error_rate = 0.0;
  Eigen::MatrixXi confusion;

  nlohmann::json to_json() const {
    std::vector<std::vector<int>> rows(confusion.rows());
    for (Eigen::Index i = 0; i < confusion.rows(); ++i) {
      rows[i].resize(confusion.cols());
      for (Eigen::Index j = 0; j < confusion.cols(); ++j)
        rows[i][j] = confusion(i, j);
    }
    return nlohmann::json{{"accuracy", accuracy},
                          {"speaker_error_rate", speaker_error_rate},
                          {"confusion", rows}};
  }
};

/// One estimate's orthogonal decomposition.  The components live on the
/// zero-padded domain of length n + L - 1 (a length-L filter smears the
/// last sample L - 1 steps past the end), and sum to the estimate padded
/// with zeros onto that domain.
struct BssComponents {
  std::vector<double> target;
  std::vector<double> interference;
  std::vector<double> artifacts;
};

namespace detail {

inline double signal_energy(const std::vector<double> &x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

/// Energy ratio in dB with vanishing numerators/denominators mapped to the
/// sentinels.  "Vanishing" is relative (1e-12 of the combined energy):
/// residuals that small are at the projection solver's floor, not signal.
inline double energy_ratio_db(double num, double den) {
  double scale = num + den;
  if (scale <= 0.0 || num <= 1e-12 * scale) return -kDbSentinel;
  if (den <= 1e-12 * scale) return kDbSentinel;
  return std::clamp(10.0 * std::log10(num / den), -kDbSentinel, kDbSentinel);
}

/// Projects estimates onto spans of delayed references.  The Gram matrix of
/// all delayed reference copies (block Toeplitz, built from FFT
/// cross-correlations) is assembled and factored once per reference set, so
/// scoring many estimates against the same scene is cheap.
class BssProjector {
 public:
  BssProjector(const std::vector<std::vector<double>> &references, int taps)
      : refs_(references),
        taps_(taps),
        n_(references.front().size()),
        nfft_(std::bit_ceil(n_ + static_cast<std::size_t>(taps))) {
    const int j_count = static_cast<int>(refs_.size());
    const int dim = j_count * taps_;

    ref_spectra_.resize(j_count);
    std::vector<double> padded(nfft_, 0.0);
    for (int j = 0; j < j_count; ++j) {
      std::copy(refs_[j].begin(), refs_[j].end(), padded.begin());
      fft_.fwd(ref_spectra_[j], padded);
    }

    // G[(a, ta), (b, tb)] = sum_u ref_a(u) ref_b(u + ta - tb), a correlation
    // read off the FFT product at lag ta - tb (negative lags wrap).
    Mat gram(dim, dim);
    for (int a = 0; a < j_count; ++a) {
      for (int b = 0; b <= a; ++b) {
        std::vector<double> corr =
            cross_correlation(ref_spectra_[a], ref_spectra_[b]);
        for (int ta = 0; ta < taps_; ++ta)
          for (int tb = 0; tb < taps_; ++tb) {
            int lag = ta - tb;
            double v = corr[lag >= 0 ? lag : static_cast<int>(nfft_) + lag];
            gram(a * taps_ + ta, b * taps_ + tb) = v;
          }
        if (a != b)
          gram.block(b * taps_, a * taps_, taps_, taps_) =
              gram.block(a * taps_, b * taps_, taps_, taps_).transpose();
      }
    }

    // Narrowband references make the delayed-copy Gram rank deficient; a
    // relative diagonal load keeps the factorization stable.  Any solution
    // of the (consistent) normal equations yields the same projection, so
    // the load only perturbs ratios at the ~1e-10 level.
    double load = 1e-10 * gram.trace() / dim;
    gram.diagonal().array() += load;

    full_solver_.compute(gram);
    block_solvers_.resize(j_count);
    for (int j = 0; j < j_count; ++j)
      block_solvers_[j].compute(
          gram.block(j * taps_, j * taps_, taps_, taps_));
  }

  BssComponents decompose(const std::vector<double> &estimate,
                          int target_index) {
    const int j_count = static_cast<int>(refs_.size());
    const int dim = j_count * taps_;

    std::vector<double> padded(nfft_, 0.0);
    std::copy(estimate.begin(), estimate.end(), padded.begin());
    std::vector<cplx> est_spectrum;
    fft_.fwd(est_spectrum, padded);

    Vec d(dim);
    for (int j = 0; j < j_count; ++j) {
      std::vector<double> corr = cross_correlation(ref_spectra_[j], est_spectrum);
      for (int t = 0; t < taps_; ++t) d(j * taps_ + t) = corr[t];
    }

    Vec h_all = full_solver_.solve(d);
    Vec h_target = block_solvers_[target_index].solve(
        d.segment(target_index * taps_, taps_));

    const std::size_t out_len = n_ + static_cast<std::size_t>(taps_) - 1;
    BssComponents comps;
    comps.target = filter_reference(target_index, h_target.data());
    std::vector<double> projection(out_len, 0.0);
    for (int j = 0; j < j_count; ++j) {
      std::vector<double> part = filter_reference(j, h_all.data() + j * taps_);
      for (std::size_t t = 0; t < out_len; ++t) projection[t] += part[t];
    }
    comps.interference.resize(out_len);
    comps.artifacts.resize(out_len);
    for (std::size_t t = 0; t < out_len; ++t) {
      comps.interference[t] = projection[t] - comps.target[t];
      comps.artifacts[t] = (t < n_ ? estimate[t] : 0.0) - projection[t];
    }
    return comps;
  }

 private:
  std::vector<double> cross_correlation(const std::vector<cplx> &a,
                                        const std::vector<cplx> &b) {
    std::vector<cplx> prod(nfft_);
    for (std::size_t i = 0; i < nfft_; ++i) prod[i] = std::conj(a[i]) * b[i];
    std::vector<double> out;
    fft_.inv(out, prod);
    return out;
  }

  std::vector<double> filter_reference(int j, const double *taps) const {
    std::vector<double> out(n_ + static_cast<std::size_t>(taps_) - 1, 0.0);
    const std::vector<double> &x = refs_[j];
    for (std::size_t t = 0; t < n_; ++t) {
      double xv = x[t];
      if (xv == 0.0) continue;
      for (int k = 0; k < taps_; ++k) out[t + k] += xv * taps[k];
    }
    return out;
  }

  const std::vector<std::vector<double>> &refs_;
  int taps_;
  std::size_t n_;
  std::size_t nfft_;
  Eigen::FFT<double> fft_;
  std::vector<std::vector<cplx>> ref_spectra_;
  Eigen::LDLT<Mat> full_solver_;
  std::vector<Eigen::LDLT<Mat>> block_solvers_;
};

inline void validate_references(
    const std::vector<std::vector<double>> &references, int filter_taps) {
  if (filter_taps < 1)
    throw ConfigError("bss_eval: filter length must be positive");
  if (references.empty()) throw ShapeError("bss_eval: no reference sources");
  std::size_t n = references.front().size();
  if (n == 0) throw ShapeError("bss_eval: empty signals");
  for (const auto &r : references)
    if (r.size() != n) throw ShapeError("bss_eval: reference lengths differ");
  for (std::size_t s = 0; s < references.size(); ++s)
    if (signal_energy(references[s]) <= 0.0)
      throw DataError("bss_eval: zero-energy reference for source " +
                      std::to_string(s) + "; metric undefined");
}

}  // namespace detail

/// Decomposes one estimate against the reference set (see file header).
/// target_index selects which reference is the wanted source.
inline BssComponents decompose_estimate(
    const std::vector<double> &estimate,
    const std::vector<std::vector<double>> &references, int target_index,
    int filter_taps = kBssFilterTaps) {
  detail::validate_references(references, filter_taps);
  if (estimate.size() != references.front().size())
    throw ShapeError("decompose_estimate: estimate length does not match references");
  if (target_index < 0 ||
      target_index >= static_cast<int>(references.size()))
    throw ShapeError("decompose_estimate: target index out of range");
  detail::BssProjector projector(references, filter_taps);
  return projector.decompose(estimate, target_index);
}

/// Scores each estimate against the reference it is paired with by position
/// (estimates[s] vs references[s]).  All signals must share one length;
/// every reference must carry energy.
inline SeparationScores bss_eval(
    const std::vector<std::vector<double>> &estimates,
    const std::vector<std::vector<double>> &references,
    int filter_taps = kBssFilterTaps) {
  detail::validate_references(references, filter_taps);
  if (estimates.size() != references.size())
    throw ShapeError("bss_eval: " + std::to_string(estimates.size()) +
                     " estimates vs " + std::to_string(references.size()) +
                     " references");
  for (const auto &e : estimates)
    if (e.size() != references.front().size())
      throw ShapeError("bss_eval: estimate length does not match references");

  detail::BssProjector projector(references, filter_taps);
  SeparationScores scores;
  scores.sdr.reserve(estimates.size());
  scores.sir.reserve(estimates.size());
  scores.sar.reserve(estimates.size());
  for (std::size_t s = 0; s < estimates.size(); ++s) {
    BssComponents comps = projector.decompose(estimates[s], static_cast<int>(s));
    double target = detail::signal_energy(comps.target);
    double interf = detail::signal_energy(comps.interference);
    double artif = detail::signal_energy(comps.artifacts);
    scores.sdr.push_back(detail::energy_ratio_db(target, interf + artif));
    scores.sir.push_back(detail::energy_ratio_db(target, interf));
    scores.sar.push_back(detail::energy_ratio_db(target + interf, artif));
  }
  return scores;
}

/// AudioBuffer convenience overload: evaluates channel 1 of every buffer.
/// Sample rates must agree across all buffers.
inline SeparationScores bss_eval(const std::vector<AudioBuffer> &estimates,
                                 const std::vector<AudioBuffer> &references,
                                 int filter_taps = kBssFilterTaps) {
  if (estimates.empty() || estimates.size() != references.size())
    throw ShapeError("bss_eval: estimate/reference counts differ");
  int rate = references.front().sample_rate;
  auto extract = [rate](const std::vector<AudioBuffer> &buffers) {
    std::vector<std::vector<double>> out;
    out.reserve(buffers.size());
    for (const AudioBuffer &b : buffers) {
      if (b.channel_count() < 1)
        throw ShapeError("bss_eval: buffer has no channels");
      if (b.sample_rate != rate)
        throw ConfigError("bss_eval: sample rates differ across buffers");
      out.push_back(b.channels.front());
    }
    return out;
  };
  return bss_eval(extract(estimates), extract(references), filter_taps);
}

/// Position-level recognition scoring: accuracy is the fraction of
/// positions whose assigned label matches the ground truth, the speaker
/// error rate its complement.  Labels index the speaker library
/// [0, label_count).
inline RecognitionScores score_recognition(
    const std::vector<std::vector<int>> &assigned,
    const std::vector<std::vector<int>> &truth, int label_count) {
  if (label_count < 1)
    throw ConfigError("score_recognition: label_count must be positive");
  if (assigned.size() != truth.size())
    throw ShapeError("score_recognition: trial counts differ (" +
                     std::to_string(assigned.size()) + " vs " +
                     std::to_string(truth.size()) + ")");

  RecognitionScores scores;
  scores.confusion = Eigen::MatrixXi::Zero(label_count, label_count);
  long total = 0;
  long correct = 0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (assigned[t].size() != truth[t].size())
      throw ShapeError("score_recognition: position counts differ in trial " +
                       std::to_string(t));
    for (std::size_t p = 0; p < truth[t].size(); ++p) {
      int a = assigned[t][p];
      int g = truth[t][p];
      if (a < 0 || a >= label_count || g < 0 || g >= label_count)
        throw DataError("score_recognition: label outside library in trial " +
                        std::to_string(t));
      ++scores.confusion(g, a);
      ++total;
      if (a == g) ++correct;
    }
  }
  if (total == 0)
    throw DataError("score_recognition: no positions to score");
  scores.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  scores.speaker_error_rate = 1.0 - scores.accuracy;
  return scores;
}

}  // namespace mcnmf

#endif  // MCNMF_BSS_EVAL_HPP_
