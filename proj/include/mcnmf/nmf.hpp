// include/mcnmf/nmf.hpp

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
// Single-channel NMF under the Itakura-Saito divergence: dictionary
// learning, activation inference against a fixed library, activation-based
// speaker identification, and single-channel Wiener reconstruction.

#ifndef MCNMF_NMF_HPP_
#define MCNMF_NMF_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcnmf/common.hpp"
#include "mcnmf/rng.hpp"
#include "mcnmf/stft.hpp"

namespace mcnmf {

/// Spectral dictionary: F x K non-negative matrix whose columns are basis
/// spectra.  After every update step each column sums to 1.
struct Dictionary {
  Mat basis;  // F x K

  int bins() const { return static_cast<int>(basis.rows()); }
  int k() const { return static_cast<int>(basis.cols()); }
};

/// Activation matrix: K x N non-negative.
struct Activations {
  Mat coeffs;  // K x N

  int k() const { return static_cast<int>(coeffs.rows()); }
  int frames() const { return static_cast<int>(coeffs.cols()); }
};

/// Concatenation of per-speaker dictionaries [T^1 T^2 ... T^J] with the
/// bookkeeping needed to map basis columns back to speakers.  Dictionary j
/// occupies the contiguous column range [offset(j), offset(j) + k of j).
struct Library {
  Mat basis;  // F x K_tot
  std::vector<std::string> speaker_ids;
  std::vector<int> per_speaker_k;
  StftConfig stft_config;
  int sample_rate = 16000;

  int dictionary_count() const { return static_cast<int>(speaker_ids.size()); }

  int total_k() const {
    return std::accumulate(per_speaker_k.begin(), per_speaker_k.end(), 0);
  }

  int offset(int j) const {
    return std::accumulate(per_speaker_k.begin(), per_speaker_k.begin() + j, 0);
  }

  void validate() const {
    if (speaker_ids.size() != per_speaker_k.size())
      throw ShapeError("Library: speaker_ids and per_speaker_k sizes differ");
    if (basis.cols() != total_k())
      throw ShapeError("Library: basis columns do not match per-speaker counts");
    for (int k : per_speaker_k)
      if (k <= 0) throw ShapeError("Library: non-positive basis count");
    if ((basis.array() < 0.0).any())
      throw DataError("Library: negative basis entry");
  }
};

namespace detail {

inline void check_nonnegative(const Mat &m, const char *what) {
  if ((m.array() < 0.0).any())
    throw DataError(std::string(what) + ": negative entry");
}

/// Seeded uniform(0,1) + 0.1 initialization, filled row by row so results
/// are independent of the matrix storage order.
inline Mat random_init(int rows, int cols, Rng *rng) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = 0.1 + rng->uniform();
  return m;
}

}  // namespace detail

/// Itakura-Saito divergence d(x, xhat) = sum of x/x̂ - log(x/x̂) - 1 over
/// entries.  Both arguments are floored at kEps so the value stays finite
/// on silent bins.  Throws DataError on negative entries, ShapeError on
/// dimension mismatch.
inline double is_divergence(const Mat &x, const Mat &xhat) {
  if (x.rows() != xhat.rows() || x.cols() != xhat.cols())
    throw ShapeError("is_divergence: dimension mismatch");
  detail::check_nonnegative(x, "is_divergence");
  detail::check_nonnegative(xhat, "is_divergence");
  double total = 0.0;
  for (int c = 0; c < x.cols(); ++c) {
    for (int r = 0; r < x.rows(); ++r) {
      double ratio = std::max(x(r, c), kEps) / std::max(xhat(r, c), kEps);
      total += ratio - std::log(ratio) - 1.0;
    }
  }
  return total;
}

inline double is_divergence(double x, double xhat) {
  Mat mx(1, 1), mxh(1, 1);
  mx(0, 0) = x;
  mxh(0, 0) = xhat;
  return is_divergence(mx, mxh);
}

inline double is_divergence(const PowerSpectrogram &x, const Mat &xhat) {
  return is_divergence(x.data, xhat);
}

/// One multiplicative dictionary step
///   t_fk <- t_fk * sqrt( sum_n (x/x̂²) v_kn / sum_n (1/x̂) v_kn ),
/// followed by column normalization t_fk <- t_fk / sum_f* t_f*k.
/// x̂ = T V is floored at kEps, as are the update denominator and the
/// updated entries.  Throws ShapeError on dimension mismatch.
inline Dictionary update_dictionary(const PowerSpectrogram &x,
                                    const Dictionary &t, const Activations &v) {
  if (t.bins() != x.bins() || v.k() != t.k() || v.frames() != x.frames())
    throw ShapeError("update_dictionary: dimension mismatch");
  Mat xhat = (t.basis * v.coeffs).cwiseMax(kEps);
  Mat ratio_num = (x.data.array() / xhat.array().square()).matrix();
  Mat ratio_den = xhat.cwiseInverse();
  Mat num = ratio_num * v.coeffs.transpose();
  Mat den = (ratio_den * v.coeffs.transpose()).cwiseMax(kEps);
  Dictionary out;
  out.basis =
      (t.basis.array() * (num.array() / den.array()).sqrt()).max(kEps).matrix();
  Vec colsum = out.basis.colwise().sum();
  out.basis.array().rowwise() /= colsum.transpose().array();
  return out;
}

/// One multiplicative activation step per the analogous update
///   v_kn <- v_kn * sqrt( sum_f t_fk (x/x̂²) / sum_f t_fk (1/x̂) ).
/// No normalization is applied to V.
inline Activations update_activations(const PowerSpectrogram &x,
                                      const Dictionary &t, const Activations &v) {
  if (t.bins() != x.bins() || v.k() != t.k() || v.frames() != x.frames())
    throw ShapeError("update_activations: dimension mismatch");
  Mat xhat = (t.basis * v.coeffs).cwiseMax(kEps);
  Mat ratio_num = (x.data.array() / xhat.array().square()).matrix();
  Mat ratio_den = xhat.cwiseInverse();
  Mat num = t.basis.transpose() * ratio_num;
  Mat den = (t.basis.transpose() * ratio_den).cwiseMax(kEps);
  Activations out;
  out.coeffs =
      (v.coeffs.array() * (num.array() / den.array()).sqrt()).max(kEps).matrix();
  return out;
}

/// One full alternating iteration as used inside factorize: dictionary step
/// with the column-sum scale moved into V (so the product T V is unchanged
/// by the normalization and the divergence-descent guarantee of the
/// multiplicative updates is preserved), then an activation step.
inline void factorize_round(const PowerSpectrogram &x, Dictionary *t,
                            Activations *v) {
  // Raw Eq.-2 step.
  Mat xhat = (t->basis * v->coeffs).cwiseMax(kEps);
  Mat ratio_num = (x.data.array() / xhat.array().square()).matrix();
  Mat num = ratio_num * v->coeffs.transpose();
  Mat den = (xhat.cwiseInverse() * v->coeffs.transpose()).cwiseMax(kEps);
  t->basis =
      (t->basis.array() * (num.array() / den.array()).sqrt()).max(kEps).matrix();
  // Column normalization, compensated in V to keep T V invariant.
  Vec colsum = t->basis.colwise().sum();
  t->basis.array().rowwise() /= colsum.transpose().array();
  v->coeffs.array().colwise() *= colsum.array();
  *v = update_activations(x, *t, *v);
}

/// Learns a K-basis dictionary and activations from a power spectrogram by
/// alternating multiplicative updates from a seeded random initialization
/// (entries uniform(0,1) + 0.1, T filled first).  If divergence_log is
/// given, it receives is_divergence(x, T V) after every iteration; the
/// sequence is non-increasing (within 1e-9 relative slack).
inline std::pair<Dictionary, Activations> factorize(
    const PowerSpectrogram &x, int k, int iterations, std::uint64_t seed,
    std::vector<double> *divergence_log = nullptr) {
  if (k < 1) throw ConfigError("factorize: k must be >= 1");
  if (iterations < 1) throw ConfigError("factorize: iterations must be >= 1");
  if (k > std::min(x.bins(), x.frames()))
    std::cerr << "factorize: warning: k = " << k
              << " exceeds min(F, N) = " << std::min(x.bins(), x.frames())
              << "; factorization is not rank-reducing\n";
  detail::check_nonnegative(x.data, "factorize");
  Rng rng(seed, "nmf-factorize");
  Dictionary t{detail::random_init(x.bins(), k, &rng)};
  Activations v{detail::random_init(k, x.frames(), &rng)};
  if (divergence_log) divergence_log->clear();
  for (int it = 0; it < iterations; ++it) {
    factorize_round(x, &t, &v);
    if (divergence_log)
      divergence_log->push_back(is_divergence(x.data, t.basis * v.coeffs));
  }
  return {t, v};
}

/// Infers activations of x against a fixed library by iterating the
/// activation update only.  The library is never modified.
inline Activations infer_activations(const PowerSpectrogram &x,
                                     const Library &library, int iterations,
                                     std::uint64_t seed,
                                     std::vector<double> *divergence_log = nullptr) {
  library.validate();
  if (library.basis.rows() != x.bins())
    throw ShapeError("infer_activations: library bin count does not match input");
  if (iterations < 1)
    throw ConfigError("infer_activations: iterations must be >= 1");
  Rng rng(seed, "nmf-infer");
  Dictionary t{library.basis};
  Activations v{detail::random_init(library.total_k(), x.frames(), &rng)};
  if (divergence_log) divergence_log->clear();
  for (int it = 0; it < iterations; ++it) {
    v = update_activations(x, t, v);
    if (divergence_log)
      divergence_log->push_back(is_divergence(x.data, t.basis * v.coeffs));
  }
  return v;
}

/// Total activation mass per speaker: sum over the speaker's basis columns
/// and all frames.
inline Vec activation_mass_per_speaker(const Activations &v,
                                       const Library &library) {
  library.validate();
  if (v.k() != library.total_k())
    throw ShapeError("activation_mass_per_speaker: activation rows do not match library");
  Vec mass(library.dictionary_count());
  for (int j = 0; j < library.dictionary_count(); ++j) {
    int lo = library.offset(j);
    int k = library.per_speaker_k[j];
    mass(j) = v.coeffs.middleRows(lo, k).sum();
  }
  return mass;
}

/// Picks the speaker whose dictionary accumulates the largest activation
/// mass; ties break toward the lowest dictionary index.  Throws DataError
/// on empty activations.
inline std::string identify_speaker_by_activation(const Activations &v,
                                                  const Library &library) {
  if (v.k() == 0 || v.frames() == 0)
    throw DataError("identify_speaker_by_activation: empty activations");
  Vec mass = activation_mass_per_speaker(v, library);
  int best = 0;
  for (int j = 1; j < mass.size(); ++j)
    if (mass(j) > mass(best)) best = j;
  return library.speaker_ids[best];
}

/// Single-channel Wiener reconstruction of speaker j:
///   ŷ_fn = (sum_{k in κ^j} t_fk v_kn / sum_{all k} t_fk v_kn) x̃_fn.
/// The mask is a ratio of power-model sums applied to the complex
/// observation (phase kept).  The denominator is floored at kEps; wherever
/// it is not floored the masks over all speakers sum to one, so the
/// reconstructions add up to x̃ exactly.
inline ComplexSpectrogram wiener_reconstruct_single(const ComplexSpectrogram &xtilde,
                                                    const Library &library,
                                                    const Activations &v,
                                                    int target) {
  library.validate();
  if (target < 0 || target >= library.dictionary_count())
    throw ShapeError("wiener_reconstruct_single: target index out of range");
  if (library.basis.rows() != xtilde.bins() || v.k() != library.total_k() ||
      v.frames() != xtilde.frames())
    throw ShapeError("wiener_reconstruct_single: dimension mismatch");
  int lo = library.offset(target);
  int k = library.per_speaker_k[target];
  Mat num = library.basis.middleCols(lo, k) * v.coeffs.middleRows(lo, k);
  Mat den = (library.basis * v.coeffs).cwiseMax(kEps);
  ComplexSpectrogram out;
  out.config = xtilde.config;
  out.sample_rate = xtilde.sample_rate;
  out.data = xtilde.data.cwiseProduct((num.array() / den.array()).matrix().cast<cplx>());
  return out;
}

inline ComplexSpectrogram wiener_reconstruct_single(const ComplexSpectrogram &xtilde,
                                                    const Library &library,
                                                    const Activations &v,
                                                    const std::string &label) {
  for (int j = 0; j < library.dictionary_count(); ++j)
    if (library.speaker_ids[j] == label)
      return wiener_reconstruct_single(xtilde, library, v, j);
  throw DataError("wiener_reconstruct_single: unknown speaker label " + label);
}

/// Serializes a library as a single JSON document:
/// {format_version, sample_rate, stft:{window_ms, hop_ms, fft_size},
///  speakers:[{label, k}], basis: row-major F x K_tot float64 array}.
inline void save_library(const Library &library, const std::string &path) {
  library.validate();
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["sample_rate"] = library.sample_rate;
  doc["stft"] = {{"window_ms", library.stft_config.window_length_ms},
                 {"hop_ms", library.stft_config.hop_length_ms},
                 {"fft_size", library.stft_config.effective_fft_size(library.sample_rate)}};
  doc["speakers"] = nlohmann::json::array();
  for (int j = 0; j < library.dictionary_count(); ++j)
    doc["speakers"].push_back({{"label", library.speaker_ids[j]},
                               {"k", library.per_speaker_k[j]}});
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(library.basis.size()));
  for (int f = 0; f < library.basis.rows(); ++f)
    for (int k = 0; k < library.basis.cols(); ++k) flat.push_back(library.basis(f, k));
  doc["basis"] = flat;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("save_library: cannot open " + path + " for writing");
  os << doc.dump(1) << "\n";
  if (!os) throw IoError("save_library: write failed for " + path);
}

inline Library load_library(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_library: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("load_library: invalid JSON in " + path + ": " + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != 1)
      throw FormatError("load_library: unsupported format_version in " + path);
    Library lib;
    lib.sample_rate = doc.at("sample_rate").get<int>();
    lib.stft_config.window_length_ms = doc.at("stft").at("window_ms").get<double>();
    lib.stft_config.hop_length_ms = doc.at("stft").at("hop_ms").get<double>();
    lib.stft_config.fft_size = doc.at("stft").at("fft_size").get<int>();
    for (const auto &sp : doc.at("speakers")) {
      lib.speaker_ids.push_back(sp.at("label").get<std::string>());
      lib.per_speaker_k.push_back(sp.at("k").get<int>());
    }
    std::vector<double> flat = doc.at("basis").get<std::vector<double>>();
    int k_tot = lib.total_k();
    if (k_tot <= 0 || flat.size() % k_tot != 0)
      throw FormatError("load_library: basis size does not match speaker counts");
    int bins = static_cast<int>(flat.size()) / k_tot;
    lib.basis.resize(bins, k_tot);
    for (int f = 0; f < bins; ++f)
      for (int k = 0; k < k_tot; ++k)
        lib.basis(f, k) = flat[static_cast<std::size_t>(f) * k_tot + k];
    lib.validate();
    return lib;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("load_library: missing or mistyped field in " + path + ": " +
                      e.what());
  }
}

}  // namespace mcnmf

#endif  // MCNMF_NMF_HPP_
