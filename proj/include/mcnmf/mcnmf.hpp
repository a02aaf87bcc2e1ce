// include/mcnmf/mcnmf.hpp

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
// Multichannel NMF with latent speaker/dictionary indicators: the model
//
//   Xhat_fn = sum_s H_fs * lambda_sfn,   lambda_sfn = sum_k (Z C)_sk t_fk v_kn
//
// is fit to the observed covariances X_fn = xtilde_fn xtilde_fn^H under the
// multichannel Itakura-Saito divergence
//
//   D = sum_fn [ tr(X Xhat^-1) - log det(X Xhat^-1) - I ].
//
// T, V, Z, C receive multiplicative updates built from the trace kernels
//   psi_sfn = tr(Xhat^-1 X Xhat^-1 H_fs),  phi_sfn = tr(Xhat^-1 H_fs),
// and every spatial covariance H_fs solves the algebraic Riccati equation
// H A H = B via the principal-square-root formula.  Blind training fixes
// Z binary (one dictionary per spatial source); joint testing fixes T and
// C and lets V, Z, H adapt, so separation and identification are solved by
// one optimization.

#ifndef MCNMF_MCNMF_HPP_
#define MCNMF_MCNMF_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcnmf/common.hpp"
#include "mcnmf/nmf.hpp"
#include "mcnmf/rng.hpp"
#include "mcnmf/stft.hpp"

namespace mcnmf {

/// One complex spectrogram per microphone channel, all with identical
/// dimensions and analysis parameters.
struct MultichannelSpectrogram {
  std::vector<CMat> channels;  // each F x N
  StftConfig config;
  int sample_rate = 0;

  int channel_count() const { return static_cast<int>(channels.size()); }
  int bins() const { return channels.empty() ? 0 : static_cast<int>(channels[0].rows()); }
  int frames() const { return channels.empty() ? 0 : static_cast<int>(channels[0].cols()); }

  void validate() const {
    if (channels.empty())
      throw ShapeError("MultichannelSpectrogram: no channels");
    for (const auto &ch : channels)
      if (ch.rows() != channels[0].rows() || ch.cols() != channels[0].cols())
        throw ShapeError("MultichannelSpectrogram: channel dimensions differ");
  }
};

/// STFT of every channel of a buffer.
inline MultichannelSpectrogram stft_multichannel(const AudioBuffer &buffer,
                                                 const StftConfig &config) {
  buffer.validate();
  if (buffer.channel_count() == 0)
    throw ShapeError("stft_multichannel: buffer has no channels");
  MultichannelSpectrogram out;
  out.config = config;
  out.sample_rate = buffer.sample_rate;
  for (int i = 0; i < buffer.channel_count(); ++i)
    out.channels.push_back(stft(buffer.channels[i], buffer.sample_rate, config).data);
  return out;
}

/// Inverse STFT of every channel.
inline AudioBuffer istft_multichannel(const MultichannelSpectrogram &spec) {
  spec.validate();
  AudioBuffer out;
  out.sample_rate = spec.sample_rate;
  for (const auto &ch : spec.channels) {
    ComplexSpectrogram s;
    s.data = ch;
    s.config = spec.config;
    s.sample_rate = spec.sample_rate;
    out.channels.push_back(istft(s));
  }
  return out;
}

/// Field of I x I Hermitian PSD matrices, one per time-frequency bin.
/// Layout: matrices for a fixed f are contiguous over n (column-major
/// entries within each matrix), which suits the per-frequency kernels.
struct ObservedCovarianceField {
  int bins = 0;
  int frames = 0;
  int channels = 0;
  std::vector<cplx> data;  // ((f * frames) + n) * I^2 entries

  void resize(int f, int n, int i) {
    bins = f;
    frames = n;
    channels = i;
    data.assign(static_cast<std::size_t>(f) * n * i * i, cplx(0.0, 0.0));
  }

  const cplx *ptr(int f, int n) const {
    return data.data() +
           (static_cast<std::size_t>(f) * frames + n) * channels * channels;
  }
  cplx *ptr(int f, int n) {
    return data.data() +
           (static_cast<std::size_t>(f) * frames + n) * channels * channels;
  }

  CovMat at(int f, int n) const {
    CovMat m(channels, channels);
    std::copy(ptr(f, n), ptr(f, n) + channels * channels, m.data());
    return m;
  }

  void set(int f, int n, const CovMat &m) {
    std::copy(m.data(), m.data() + channels * channels, ptr(f, n));
  }
};

/// Rank-1 observed covariances X_fn = xtilde_fn xtilde_fn^H.
inline ObservedCovarianceField observed_covariances(const MultichannelSpectrogram &x) {
  x.validate();
  int I = x.channel_count();
  ObservedCovarianceField field;
  field.resize(x.bins(), x.frames(), I);
  CovMat m(I, I);
  CVec v(I);
  for (int f = 0; f < x.bins(); ++f) {
    for (int n = 0; n < x.frames(); ++n) {
      for (int i = 0; i < I; ++i) v(i) = x.channels[i](f, n);
      m.noalias() = v * v.adjoint();
      field.set(f, n, m);
    }
  }
  return field;
}

/// Set of spatial covariances H_fs (I x I Hermitian PSD per frequency and
/// source).  Layout mirrors ObservedCovarianceField with s in place of n.
struct SpatialCovarianceSet {
  int bins = 0;
  int sources = 0;
  int channels = 0;
  std::vector<cplx> data;

  void resize(int f, int s, int i) {
    bins = f;
    sources = s;
    channels = i;
    data.assign(static_cast<std::size_t>(f) * s * i * i, cplx(0.0, 0.0));
  }

  const cplx *ptr(int f, int s) const {
    return data.data() +
           (static_cast<std::size_t>(f) * sources + s) * channels * channels;
  }
  cplx *ptr(int f, int s) {
    return data.data() +
           (static_cast<std::size_t>(f) * sources + s) * channels * channels;
  }

  CovMat at(int f, int s) const {
    CovMat m(channels, channels);
    std::copy(ptr(f, s), ptr(f, s) + channels * channels, m.data());
    return m;
  }

  void set(int f, int s, const CovMat &m) {
    std::copy(m.data(), m.data() + channels * channels, ptr(f, s));
  }

  /// Checks Hermitian symmetry (1e-10), positive semidefiniteness (minimum
  /// eigenvalue >= -1e-8 * trace) and, optionally, unit trace (1e-10).
  void validate(bool require_unit_trace = true) const {
    for (int f = 0; f < bins; ++f) {
      for (int s = 0; s < sources; ++s) {
        CovMat h = at(f, s);
        if ((h - h.adjoint()).cwiseAbs().maxCoeff() > 1e-10)
          throw NumericError("SpatialCovarianceSet: matrix not Hermitian");
        double trace = h.trace().real();
        Eigen::SelfAdjointEigenSolver<CovMat> es(h, Eigen::EigenvaluesOnly);
        if (es.info() != Eigen::Success)
          throw NumericError("SpatialCovarianceSet: eigen-decomposition failed");
        if (es.eigenvalues().minCoeff() < -1e-8 * std::max(trace, kEps))
          throw NumericError("SpatialCovarianceSet: matrix not PSD");
        if (require_unit_trace && std::abs(trace - 1.0) > 1e-10)
          throw NumericError("SpatialCovarianceSet: trace not normalized");
      }
    }
  }
};

/// Full joint model state.  Z is S x J (speaker indicators), C is J x K_tot
/// (dictionary indicators), and the effective per-basis source gains are
/// (Z C)_sk.  In training Z is the identity and C the binary block pattern
/// of the dictionary layout; in testing C is binary from the library index
/// sets and Z is free.
struct JointModel {
  Mat t;  // F x K_tot
  Mat v;  // K_tot x N
  Mat z;  // S x J
  Mat c;  // J x K_tot
  SpatialCovarianceSet h;
  std::vector<double> divergence_log;

  int bins() const { return static_cast<int>(t.rows()); }
  int k_total() const { return static_cast<int>(t.cols()); }
  int frames() const { return static_cast<int>(v.cols()); }
  int sources() const { return static_cast<int>(z.rows()); }
  int dictionaries() const { return static_cast<int>(z.cols()); }
  int channel_count() const { return h.channels; }

  void validate() const {
    if (v.rows() != t.cols() || c.cols() != t.cols() || c.rows() != z.cols())
      throw ShapeError("JointModel: T/V/Z/C dimensions inconsistent");
    if (h.bins != bins() || h.sources != sources())
      throw ShapeError("JointModel: spatial covariance dimensions inconsistent");
    if ((t.array() < 0.0).any() || (v.array() < 0.0).any() ||
        (z.array() < 0.0).any() || (c.array() < 0.0).any())
      throw DataError("JointModel: negative factor entry");
  }
};

namespace detail {

/// (Z C): per-source gain of each basis column.
inline Mat source_gains(const JointModel &model) { return model.z * model.c; }

/// lambda_s = T diag(g_s) V for every source; each entry is the scalar
/// power the model assigns to source s at (f, n).
inline std::vector<Mat> compute_lambda(const JointModel &model, const Mat &gains) {
  std::vector<Mat> lambda;
  lambda.reserve(model.sources());
  for (int s = 0; s < model.sources(); ++s)
    lambda.push_back((model.t * gains.row(s).asDiagonal()) * model.v);
  return lambda;
}

/// Hermitian part of a small matrix.
inline CovMat hermitian_part(const CovMat &m) {
  return 0.5 * (m + m.adjoint());
}

/// Inverse of the epsilon-loaded model covariance.  I = 1 uses the scalar
/// max-flooring of the single-channel module (so the I=1 reduction agrees
/// with nmf-is to roundoff); I >= 2 loads the diagonal with kEps before
/// inverting, per the matrix flooring convention.
inline void invert_model_cov(const CovMat &m, CovMat *out) {
  int I = static_cast<int>(m.rows());
  if (I == 1) {
    (*out)(0, 0) = 1.0 / std::max(m(0, 0).real(), kEps);
    return;
  }
  if (I == 2) {
    cplx a = m(0, 0) + kEps, b = m(0, 1);
    cplx bc = m(1, 0), d = m(1, 1) + kEps;
    double det = (a * d - b * bc).real();  // real for Hermitian m
    double inv_det = 1.0 / std::max(det, kEps * kEps);
    (*out)(0, 0) = d * inv_det;
    (*out)(0, 1) = -b * inv_det;
    (*out)(1, 0) = -bc * inv_det;
    (*out)(1, 1) = a * inv_det;
    return;
  }
  CovMat floored = m;
  floored.diagonal().array() += kEps;
  *out = floored.inverse();
}

/// log det(M + eps I) for Hermitian PSD M.
inline double logdet_floored(const CovMat &m) {
  int I = static_cast<int>(m.rows());
  if (I == 1) return std::log(std::max(m(0, 0).real(), kEps));
  if (I == 2) {
    cplx a = m(0, 0) + kEps, b = m(0, 1), d = m(1, 1) + kEps;
    double det = (a * d).real() - std::norm(b);
    return std::log(std::max(det, kEps * kEps));
  }
  CovMat floored = m;
  floored.diagonal().array() += kEps;
  Eigen::SelfAdjointEigenSolver<CovMat> es(floored, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw NumericError("logdet_floored: eigen-decomposition failed");
  double sum = 0.0;
  for (int i = 0; i < I; ++i) sum += std::log(std::max(es.eigenvalues()(i), kEps));
  return sum;
}

/// Re tr(A B) for I x I complex matrices in column-major raw storage.
inline double trace_product_real(const cplx *a, const cplx *b, int I) {
  // tr(A B) = sum_{r,c} A(r,c) B(c,r).
  double acc = 0.0;
  for (int c = 0; c < I; ++c)
    for (int r = 0; r < I; ++r) {
      const cplx &x = a[c * I + r];  // A(r,c)
      const cplx &y = b[r * I + c];  // B(c,r)
      acc += x.real() * y.real() - x.imag() * y.imag();
    }
  return acc;
}

/// Fills psi[s](f,n) = Re tr(Xi X Xi H_fs) clipped at 0 and
/// phi[s](f,n) = Re tr(Xi H_fs) floored at kEps, where Xi is the inverse of
/// the floored model covariance.  Works one frequency at a time so the
/// temporaries stay in cache.
inline void compute_psi_phi(const JointModel &model,
                            const ObservedCovarianceField &xcov,
                            const std::vector<Mat> &lambda,
                            std::vector<Mat> *psi, std::vector<Mat> *phi) {
  int F = model.bins(), N = model.frames(), S = model.sources();
  int I = model.channel_count();
  psi->assign(S, Mat(F, N));
  phi->assign(S, Mat(F, N));
  CovMat xhat(I, I), xi(I, I), tmp(I, I), psi_mat(I, I);
  for (int f = 0; f < F; ++f) {
    for (int n = 0; n < N; ++n) {
      xhat.setZero();
      for (int s = 0; s < S; ++s) {
        double w = lambda[s](f, n);
        Eigen::Map<const CovMat> h(model.h.ptr(f, s), I, I);
        xhat.noalias() += w * h;
      }
      invert_model_cov(xhat, &xi);
      Eigen::Map<const CovMat> x(xcov.ptr(f, n), I, I);
      tmp.noalias() = xi * x;
      psi_mat.noalias() = tmp * xi;
      for (int s = 0; s < S; ++s) {
        const cplx *h = model.h.ptr(f, s);
        (*psi)[s](f, n) = std::max(trace_product_real(psi_mat.data(), h, I), 0.0);
        (*phi)[s](f, n) = std::max(trace_product_real(xi.data(), h, I), kEps);
      }
    }
  }
}

}  // namespace detail

/// Model covariance Xhat_fn = sum_s H_fs sum_k (Z C)_sk t_fk v_kn.
inline CovMat model_covariance(const JointModel &model, int f, int n) {
  model.validate();
  if (f < 0 || f >= model.bins() || n < 0 || n >= model.frames())
    throw ShapeError("model_covariance: index out of range");
  int I = model.channel_count();
  Mat gains = detail::source_gains(model);
  CovMat xhat = CovMat::Zero(I, I);
  for (int s = 0; s < model.sources(); ++s) {
    double w = 0.0;
    for (int k = 0; k < model.k_total(); ++k)
      w += gains(s, k) * model.t(f, k) * model.v(k, n);
    xhat += w * model.h.at(f, s);
  }
  return xhat;
}

/// Multichannel Itakura-Saito divergence
///   sum_fn [ tr(X Xhat^-1) - log det(X Xhat^-1) - I ]
/// with Xhat inverted after flooring and the rank-deficient X floored by
/// eps*I inside the log-det term only.  At I = 1 each term reduces exactly
/// to the scalar divergence of Eq.-1 form (both arguments max-floored).
inline double multichannel_is_divergence(const ObservedCovarianceField &xcov,
                                         const JointModel &model) {
  model.validate();
  if (xcov.bins != model.bins() || xcov.frames != model.frames() ||
      xcov.channels != model.channel_count())
    throw ShapeError("multichannel_is_divergence: field/model dimension mismatch");
  int F = model.bins(), N = model.frames(), S = model.sources();
  int I = model.channel_count();
  Mat gains = detail::source_gains(model);
  std::vector<Mat> lambda = detail::compute_lambda(model, gains);
  double total = 0.0;
  CovMat xhat(I, I), xi(I, I);
  for (int f = 0; f < F; ++f) {
    for (int n = 0; n < N; ++n) {
      xhat.setZero();
      for (int s = 0; s < S; ++s) {
        Eigen::Map<const CovMat> h(model.h.ptr(f, s), I, I);
        xhat.noalias() += lambda[s](f, n) * h;
      }
      Eigen::Map<const CovMat> x(xcov.ptr(f, n), I, I);
      if (I == 1) {
        double ratio = std::max(x(0, 0).real(), kEps) /
                       std::max(xhat(0, 0).real(), kEps);
        total += ratio - std::log(ratio) - 1.0;
        continue;
      }
      detail::invert_model_cov(xhat, &xi);
      double tr = detail::trace_product_real(xcov.ptr(f, n), xi.data(), I);
      total += tr - (detail::logdet_floored(x) - detail::logdet_floored(xhat)) - I;
    }
  }
  return total;
}

/// Multiplicative dictionary update
///   t_fk <- t_fk sqrt( sum_sn g_sk v_kn psi_sfn / sum_sn g_sk v_kn phi_sfn ),
/// followed by column normalization (bare; the compensated variant used
/// inside the iteration loops lives in update_round).
inline Dictionary update_t(const JointModel &model, const ObservedCovarianceField &xcov) {
  model.validate();
  if (xcov.bins != model.bins() || xcov.frames != model.frames())
    throw ShapeError("update_t: field/model dimension mismatch");
  Mat gains = detail::source_gains(model);
  std::vector<Mat> lambda = detail::compute_lambda(model, gains);
  std::vector<Mat> psi, phi;
  detail::compute_psi_phi(model, xcov, lambda, &psi, &phi);
  Mat num = Mat::Zero(model.bins(), model.k_total());
  Mat den = Mat::Zero(model.bins(), model.k_total());
  for (int s = 0; s < model.sources(); ++s) {
    num.noalias() += (psi[s] * model.v.transpose()) * gains.row(s).asDiagonal();
    den.noalias() += (phi[s] * model.v.transpose()) * gains.row(s).asDiagonal();
  }
  Dictionary out;
  out.basis = (model.t.array() *
               (num.array().max(0.0) / den.array().max(kEps)).sqrt())
                  .max(kEps)
                  .matrix();
  Vec colsum = out.basis.colwise().sum();
  out.basis.array().rowwise() /= colsum.transpose().array();
  return out;
}

/// Multiplicative activation update (same ratio with the roles of t and v
/// exchanged); no normalization.
inline Activations update_v(const JointModel &model, const ObservedCovarianceField &xcov) {
  model.validate();
  if (xcov.bins != model.bins() || xcov.frames != model.frames())
    throw ShapeError("update_v: field/model dimension mismatch");
  Mat gains = detail::source_gains(model);
  std::vector<Mat> lambda = detail::compute_lambda(model, gains);
  std::vector<Mat> psi, phi;
  detail::compute_psi_phi(model, xcov, lambda, &psi, &phi);
  Mat num = Mat::Zero(model.k_total(), model.frames());
  Mat den = Mat::Zero(model.k_total(), model.frames());
  for (int s = 0; s < model.sources(); ++s) {
    num.noalias() += gains.row(s).transpose().asDiagonal() * (model.t.transpose() * psi[s]);
    den.noalias() += gains.row(s).transpose().asDiagonal() * (model.t.transpose() * phi[s]);
  }
  Activations out;
  out.coeffs = (model.v.array() *
                (num.array().max(0.0) / den.array().max(kEps)).sqrt())
                   .max(kEps)
                   .matrix();
  return out;
}

namespace detail {

/// q_sk = sum_fn t_fk v_kn psi_sfn, shared by the z and c updates.
inline Mat indicator_kernel(const JointModel &model, const std::vector<Mat> &field) {
  Mat q(model.sources(), model.k_total());
  for (int s = 0; s < model.sources(); ++s)
    q.row(s) =
        (model.t.cwiseProduct(field[s] * model.v.transpose())).colwise().sum();
  return q;
}

}  // namespace detail

/// Multiplicative speaker-indicator update followed by row normalization
/// sum_j z_sj = 1.  Entries are never floored, so exact zeros are preserved
/// under the multiplicative step.
inline Mat update_z(const JointModel &model, const ObservedCovarianceField &xcov) {
  model.validate();
  if (xcov.bins != model.bins() || xcov.frames != model.frames())
    throw ShapeError("update_z: field/model dimension mismatch");
  Mat gains = detail::source_gains(model);
  std::vector<Mat> lambda = detail::compute_lambda(model, gains);
  std::vector<Mat> psi, phi;
  detail::compute_psi_phi(model, xcov, lambda, &psi, &phi);
  Mat qn = detail::indicator_kernel(model, psi);  // S x K
  Mat qd = detail::indicator_kernel(model, phi);
  Mat num = qn * model.c.transpose();  // S x J
  Mat den = qd * model.c.transpose();
  Mat z = (model.z.array() *
           (num.array().max(0.0) / den.array().max(kEps)).sqrt())
              .matrix();
  for (int s = 0; s < z.rows(); ++s) {
    double rowsum = z.row(s).sum();
    z.row(s) /= std::max(rowsum, kEps);
  }
  return z;
}

/// Multiplicative dictionary-indicator update followed by column
/// normalization sum_j c_jk = 1.  Exact zeros stay zero, and a binary C is
/// an exact fixed point (the single nonzero renormalizes to 1).
inline Mat update_c(const JointModel &model, const ObservedCovarianceField &xcov) {
  model.validate();
  if (xcov.bins != model.bins() || xcov.frames != model.frames())
    throw ShapeError("update_c: field/model dimension mismatch");
  Mat gains = detail::source_gains(model);
  std::vector<Mat> lambda = detail::compute_lambda(model, gains);
  std::vector<Mat> psi, phi;
  detail::compute_psi_phi(model, xcov, lambda, &psi, &phi);
  Mat qn = detail::indicator_kernel(model, psi);  // S x K
  Mat qd = detail::indicator_kernel(model, phi);
  Mat num = model.z.transpose() * qn;  // J x K
  Mat den = model.z.transpose() * qd;
  Mat c = (model.c.array() *
           (num.array().max(0.0) / den.array().max(kEps)).sqrt())
              .matrix();
  for (int k = 0; k < c.cols(); ++k) {
    double colsum = c.col(k).sum();
    c.col(k) /= std::max(colsum, kEps);
  }
  return c;
}

namespace detail {

/// Principal square root of a Hermitian PSD matrix (eigenvalues clipped at
/// zero before the root).
inline CovMat sqrtm_psd(const CovMat &m) {
  Eigen::SelfAdjointEigenSolver<CovMat> es(hermitian_part(m));
  if (es.info() != Eigen::Success)
    throw NumericError("sqrtm_psd: eigen-decomposition failed");
  Vec w = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * w.asDiagonal() * es.eigenvectors().adjoint();
}

/// Inverse square root of a Hermitian PD matrix (eigenvalues floored).
inline CovMat inv_sqrtm_pd(const CovMat &m) {
  Eigen::SelfAdjointEigenSolver<CovMat> es(hermitian_part(m));
  if (es.info() != Eigen::Success)
    throw NumericError("inv_sqrtm_pd: eigen-decomposition failed");
  Vec w = es.eigenvalues().cwiseMax(kEps).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * w.asDiagonal() * es.eigenvectors().adjoint();
}

}  // namespace detail

/// Solves H A H = B for Hermitian PD A and Hermitian PSD B:
///   H = A^{-1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2},
/// re-symmetrized.  The result is Hermitian PSD by construction.
inline CovMat riccati_solve(const CovMat &a, const CovMat &b) {
  CovMat a_half = detail::sqrtm_psd(a);
  CovMat a_inv_half = detail::inv_sqrtm_pd(a);
  CovMat mid = detail::sqrtm_psd(a_half * b * a_half);
  return detail::hermitian_part(a_inv_half * mid * a_inv_half);
}

/// Spatial covariance update for one (f, s): solves H A H = B with
///   A = sum_n lambda_sfn Xhat_fn^-1 + eps I,
///   B = H ( sum_n lambda_sfn Xhat^-1 X Xhat^-1 ) H   (current H).
inline CovMat riccati_update_h(const JointModel &model,
                               const ObservedCovarianceField &xcov, int f, int s) {
  model.validate();
  if (f < 0 || f >= model.bins() || s < 0 || s >= model.sources())
    throw ShapeError("riccati_update_h: index out of range");
  int I = model.channel_count(), N = model.frames(), S = model.sources();
  Mat gains = detail::source_gains(model);
  std::vector<Mat> lambda = detail::compute_lambda(model, gains);
  CovMat xhat(I, I), xi(I, I), tmp(I, I), psi_mat(I, I);
  CovMat a = CovMat::Zero(I, I), b_inner = CovMat::Zero(I, I);
  for (int n = 0; n < N; ++n) {
    xhat.setZero();
    for (int sp = 0; sp < S; ++sp) {
      Eigen::Map<const CovMat> h(model.h.ptr(f, sp), I, I);
      xhat.noalias() += lambda[sp](f, n) * h;
    }
    detail::invert_model_cov(xhat, &xi);
    Eigen::Map<const CovMat> x(xcov.ptr(f, n), I, I);
    tmp.noalias() = xi * x;
    psi_mat.noalias() = tmp * xi;
    double w = lambda[s](f, n);
    a.noalias() += w * xi;
    b_inner.noalias() += w * psi_mat;
  }
  a.diagonal().array() += kEps;
  CovMat h_old = model.h.at(f, s);
  CovMat b = detail::hermitian_part(h_old * b_inner * h_old);
  return riccati_solve(detail::hermitian_part(a), b);
}

/// Applies the paper's four scale normalizations, all bare (no rescaling
/// compensation elsewhere): H_fs <- H_fs / tr(H_fs); t columns sum to 1;
/// z rows sum to 1; c columns sum to 1.  Zero traces/sums are floored.
inline JointModel normalize(const JointModel &model) {
  JointModel out = model;
  for (int f = 0; f < out.h.bins; ++f) {
    for (int s = 0; s < out.h.sources; ++s) {
      cplx *p = out.h.ptr(f, s);
      double trace = 0.0;
      for (int i = 0; i < out.h.channels; ++i)
        trace += p[i * out.h.channels + i].real();
      trace = std::max(trace, kEps);
      // Division (not reciprocal-multiply) so a scalar H normalizes to
      // exactly 1.0.
      for (int i = 0; i < out.h.channels * out.h.channels; ++i) p[i] /= trace;
    }
  }
  for (int k = 0; k < out.t.cols(); ++k)
    out.t.col(k) /= std::max(out.t.col(k).sum(), kEps);
  for (int s = 0; s < out.z.rows(); ++s)
    out.z.row(s) /= std::max(out.z.row(s).sum(), kEps);
  for (int k = 0; k < out.c.cols(); ++k)
    out.c.col(k) /= std::max(out.c.col(k).sum(), kEps);
  return out;
}

/// Which factors a full update round touches.  V and H are always updated;
/// training freezes Z and C (binary), testing freezes T and C.
struct RoundOptions {
  bool update_t = true;
  bool update_z = true;
  bool update_c = true;
  bool log_divergence = true;
};

/// One full update round in the order t, v, z, c, H, normalize.  The
/// dictionary normalization inside the round moves the column scales into V
/// (T V invariant), which preserves the descent guarantee of the
/// multiplicative updates; Z and C renormalize inside their own updates and
/// the round ends with the bare H trace normalization.  Appends the
/// divergence to model->divergence_log unless disabled.
inline void update_round(JointModel *model, const ObservedCovarianceField &xcov,
                         const RoundOptions &opts = RoundOptions{}) {
  if (opts.update_t) {
    Mat gains = detail::source_gains(*model);
    std::vector<Mat> lambda = detail::compute_lambda(*model, gains);
    std::vector<Mat> psi, phi;
    detail::compute_psi_phi(*model, xcov, lambda, &psi, &phi);
    Mat num = Mat::Zero(model->bins(), model->k_total());
    Mat den = Mat::Zero(model->bins(), model->k_total());
    for (int s = 0; s < model->sources(); ++s) {
      num.noalias() += (psi[s] * model->v.transpose()) * gains.row(s).asDiagonal();
      den.noalias() += (phi[s] * model->v.transpose()) * gains.row(s).asDiagonal();
    }
    model->t = (model->t.array() *
                (num.array().max(0.0) / den.array().max(kEps)).sqrt())
                   .max(kEps)
                   .matrix();
    Vec colsum = model->t.colwise().sum();
    model->t.array().rowwise() /= colsum.transpose().array();
    model->v.array().colwise() *= colsum.array();
  }

  model->v = update_v(*model, xcov).coeffs;
  if (opts.update_z) model->z = update_z(*model, xcov);
  if (opts.update_c) model->c = update_c(*model, xcov);

  // Spatial covariances: every (f, s) solves its Riccati equation against
  // the covariance model built from the pre-update H.
  {
    int I = model->channel_count(), F = model->bins(), N = model->frames();
    int S = model->sources();
    Mat gains = detail::source_gains(*model);
    std::vector<Mat> lambda = detail::compute_lambda(*model, gains);
    SpatialCovarianceSet h_new = model->h;
    CovMat xhat(I, I), xi(I, I), tmp(I, I), psi_mat(I, I);
    std::vector<CovMat> a(S), b_inner(S);
    for (int f = 0; f < F; ++f) {
      for (int s = 0; s < S; ++s) {
        a[s] = CovMat::Zero(I, I);
        b_inner[s] = CovMat::Zero(I, I);
      }
      for (int n = 0; n < N; ++n) {
        xhat.setZero();
        for (int s = 0; s < S; ++s) {
          Eigen::Map<const CovMat> h(model->h.ptr(f, s), I, I);
          xhat.noalias() += lambda[s](f, n) * h;
        }
        detail::invert_model_cov(xhat, &xi);
        Eigen::Map<const CovMat> x(xcov.ptr(f, n), I, I);
        tmp.noalias() = xi * x;
        psi_mat.noalias() = tmp * xi;
        for (int s = 0; s < S; ++s) {
          double w = lambda[s](f, n);
          a[s].noalias() += w * xi;
          b_inner[s].noalias() += w * psi_mat;
        }
      }
      for (int s = 0; s < S; ++s) {
        a[s].diagonal().array() += kEps;
        CovMat h_old = model->h.at(f, s);
        CovMat b = detail::hermitian_part(h_old * b_inner[s] * h_old);
        h_new.set(f, s, riccati_solve(detail::hermitian_part(a[s]), b));
      }
    }
    model->h = h_new;
  }

  // Trailing scale normalization: H traces only.  T was normalized (with
  // compensation) in its own step, Z and C inside their updates.
  for (int f = 0; f < model->h.bins; ++f) {
    for (int s = 0; s < model->h.sources; ++s) {
      cplx *p = model->h.ptr(f, s);
      double trace = 0.0;
      for (int i = 0; i < model->h.channels; ++i)
        trace += p[i * model->h.channels + i].real();
      trace = std::max(trace, kEps);
      for (int i = 0; i < model->h.channels * model->h.channels; ++i) p[i] /= trace;
    }
  }

  if (opts.log_divergence)
    model->divergence_log.push_back(multichannel_is_divergence(xcov, *model));
}

/// Identity/I spatial covariances with a small seeded rank-1 steering
/// perturbation per source, so initial spatial signatures are distinct.
/// Used as fallback when no DOA-based initialization is available.
inline SpatialCovarianceSet make_default_h_init(int bins, int sources, int channels,
                                                std::uint64_t seed) {
  Rng rng(seed, "h-init-fallback");
  SpatialCovarianceSet h;
  h.resize(bins, sources, channels);
  std::vector<CVec> steer(sources, CVec(channels));
  for (int s = 0; s < sources; ++s)
    for (int i = 0; i < channels; ++i) {
      double phase = 2.0 * kPi * rng.uniform();
      steer[s](i) = cplx(std::cos(phase), std::sin(phase)) / std::sqrt(channels);
    }
  CovMat m(channels, channels);
  for (int f = 0; f < bins; ++f) {
    for (int s = 0; s < sources; ++s) {
      m = CovMat::Identity(channels, channels) / channels;
      m.noalias() += 0.2 * (steer[s] * steer[s].adjoint());
      m /= m.trace().real();
      h.set(f, s, m);
    }
  }
  return h;
}

/// Blind multichannel training: learns one K-basis dictionary per spatial
/// source with Z fixed to the identity and C to the binary block pattern
/// (basis k belongs to source floor(k/K)).  Returns the learned dictionaries
/// as a Library (labels "s1".."sS") together with the trained spatial
/// covariances.  The divergence log of the run is non-increasing.
inline std::pair<Library, SpatialCovarianceSet> train_blind(
    const MultichannelSpectrogram &x, int s_count, int k_per_speaker,
    int iterations, const SpatialCovarianceSet &h_init, std::uint64_t seed,
    std::vector<double> *divergence_log = nullptr) {
  x.validate();
  if (s_count < 1 || k_per_speaker < 1)
    throw ConfigError("train_blind: s_count and k_per_speaker must be >= 1");
  if (iterations < 1) throw ConfigError("train_blind: iterations must be >= 1");
  int F = x.bins(), N = x.frames(), I = x.channel_count();
  int k_tot = s_count * k_per_speaker;
  if (static_cast<long>(s_count) * k_per_speaker > static_cast<long>(F) * N)
    std::cerr << "train_blind: warning: S*K = " << k_tot << " exceeds F*N = "
              << static_cast<long>(F) * N << "; problem is ill-posed\n";
  if (h_init.bins != F || h_init.sources != s_count || h_init.channels != I)
    throw ShapeError("train_blind: h_init dimensions do not match input");

  ObservedCovarianceField xcov = observed_covariances(x);
  Rng rng(seed, "mcnmf-train");
  JointModel model;
  model.t = detail::random_init(F, k_tot, &rng);
  model.v = detail::random_init(k_tot, N, &rng);
  model.z = Mat::Identity(s_count, s_count);
  model.c = Mat::Zero(s_count, k_tot);
  for (int k = 0; k < k_tot; ++k) model.c(k / k_per_speaker, k) = 1.0;
  model.h = h_init;

  RoundOptions opts;
  opts.update_t = true;
  opts.update_z = false;
  opts.update_c = false;
  for (int it = 0; it < iterations; ++it) update_round(&model, xcov, opts);

  Library library;
  library.basis = model.t;
  for (int s = 0; s < s_count; ++s) {
    library.speaker_ids.push_back("s" + std::to_string(s + 1));
    library.per_speaker_k.push_back(k_per_speaker);
  }
  library.stft_config = x.config;
  library.sample_rate = x.sample_rate;
  if (divergence_log) *divergence_log = model.divergence_log;
  return {library, model.h};
}

/// Multichannel Wiener reconstruction of source s:
///   yhat_fn = lambda_sfn H_fs Xhat_fn^-1 xtilde_fn.
/// Summed over all sources the filters reproduce xtilde exactly, because
/// sum_s lambda_sfn H_fs = Xhat_fn.
inline MultichannelSpectrogram wiener_multichannel(const JointModel &model,
                                                   const MultichannelSpectrogram &x,
                                                   int s) {
  model.validate();
  x.validate();
  if (s < 0 || s >= model.sources())
    throw ShapeError("wiener_multichannel: source index out of range");
  if (x.bins() != model.bins() || x.frames() != model.frames() ||
      x.channel_count() != model.channel_count())
    throw ShapeError("wiener_multichannel: spectrogram/model dimension mismatch");
  int F = model.bins(), N = model.frames(), S = model.sources();
  int I = model.channel_count();
  Mat gains = detail::source_gains(model);
  std::vector<Mat> lambda = detail::compute_lambda(model, gains);
  MultichannelSpectrogram out;
  out.config = x.config;
  out.sample_rate = x.sample_rate;
  out.channels.assign(I, CMat::Zero(F, N));
  CovMat xhat(I, I), xi(I, I), filt(I, I);
  CVec xv(I), yv(I);
  for (int f = 0; f < F; ++f) {
    for (int n = 0; n < N; ++n) {
      xhat.setZero();
      for (int sp = 0; sp < S; ++sp) {
        Eigen::Map<const CovMat> h(model.h.ptr(f, sp), I, I);
        xhat.noalias() += lambda[sp](f, n) * h;
      }
      detail::invert_model_cov(xhat, &xi);
      Eigen::Map<const CovMat> h(model.h.ptr(f, s), I, I);
      filt.noalias() = lambda[s](f, n) * (h * xi);
      for (int i = 0; i < I; ++i) xv(i) = x.channels[i](f, n);
      yv.noalias() = filt * xv;
      for (int i = 0; i < I; ++i) out.channels[i](f, n) = yv(i);
    }
  }
  return out;
}

/// Result of a joint test run: per-position identities (argmax_j z_sj, ties
/// toward the lowest dictionary index), the final indicators, one separated
/// multichannel spectrogram per position, and the divergence log.
struct JointTestResult {
  std::vector<std::string> assignments;
  Mat z;
  std::vector<MultichannelSpectrogram> separated;
  std::vector<double> divergence_log;
  JointModel model;
};

/// Joint separation + identification: T is fixed to the library basis, C to
/// the binary library block pattern; V (random init), Z (uniform 1/J) and H
/// (from h_init) adapt over the update rounds.
inline JointTestResult test_joint(const MultichannelSpectrogram &x,
                                  const Library &library, int s_count,
                                  int iterations, const SpatialCovarianceSet &h_init,
                                  std::uint64_t seed) {
  x.validate();
  library.validate();
  int J = library.dictionary_count();
  if (s_count < 1) throw ConfigError("test_joint: s_count must be >= 1");
  if (s_count > J)
    throw ConfigError("test_joint: more sources than library dictionaries");
  if (iterations < 1) throw ConfigError("test_joint: iterations must be >= 1");
  if (library.basis.rows() != x.bins())
    throw ShapeError("test_joint: library bin count does not match input");
  int F = x.bins(), N = x.frames(), I = x.channel_count();
  int k_tot = library.total_k();
  if (h_init.bins != F || h_init.sources != s_count || h_init.channels != I)
    throw ShapeError("test_joint: h_init dimensions do not match input");

  ObservedCovarianceField xcov = observed_covariances(x);
  JointModel model;
  model.t = library.basis;
  // Activations are seeded per dictionary label, not by storage position,
  // so reordering the library dictionaries permutes the optimization
  // trajectory instead of changing it.
  model.v.resize(k_tot, N);
  for (int j = 0; j < J; ++j) {
    Rng rng(derive_seed(seed, "mcnmf-test-v:" + library.speaker_ids[j]));
    model.v.middleRows(library.offset(j), library.per_speaker_k[j]) =
        detail::random_init(library.per_speaker_k[j], N, &rng);
  }
  model.z = Mat::Constant(s_count, J, 1.0 / J);
  model.c = Mat::Zero(J, k_tot);
  for (int j = 0; j < J; ++j)
    for (int k = library.offset(j); k < library.offset(j) + library.per_speaker_k[j]; ++k)
      model.c(j, k) = 1.0;
  model.h = h_init;

  RoundOptions opts;
  opts.update_t = false;
  opts.update_z = true;
  opts.update_c = false;
  for (int it = 0; it < iterations; ++it) update_round(&model, xcov, opts);

  JointTestResult result;
  result.z = model.z;
  result.divergence_log = model.divergence_log;
  for (int s = 0; s < s_count; ++s) {
    int best = 0;
    for (int j = 1; j < J; ++j)
      if (model.z(s, j) > model.z(s, best)) best = j;
    result.assignments.push_back(library.speaker_ids[best]);
    result.separated.push_back(wiener_multichannel(model, x, s));
  }
  result.model = std::move(model);
  return result;
}

namespace detail {

inline void write_f64_file(const std::string &path, const double *data,
                           std::size_t count) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char *>(data),
           static_cast<std::streamsize>(count * sizeof(double)));
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

inline std::vector<double> read_f64_file(const std::string &path,
                                         std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::vector<double> data(expected);
  in.read(reinterpret_cast<char *>(data.data()),
          static_cast<std::streamsize>(expected * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != expected * sizeof(double))
    throw FormatError("checkpoint: sidecar " + path + " has wrong size");
  return data;
}

inline std::vector<double> matrix_row_major(const Mat &m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

inline Mat matrix_from_row_major(const std::vector<double> &data, int rows, int cols) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = data[static_cast<std::size_t>(r) * cols + c];
  return m;
}

}  // namespace detail

/// Writes a model checkpoint: <prefix>.json manifest (dimensions, iteration
/// count, divergence log, sidecar names) plus raw little-endian float64
/// sidecars for T, V, Z, C and interleaved (re, im) float64 for H.
inline void save_checkpoint(const JointModel &model, const std::string &prefix) {
  model.validate();
  namespace fs = std::filesystem;
  std::string stem = fs::path(prefix).filename().string();
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["dims"] = {{"bins", model.bins()},       {"k_total", model.k_total()},
                 {"frames", model.frames()},   {"sources", model.sources()},
                 {"dictionaries", model.dictionaries()},
                 {"channels", model.channel_count()}};
  doc["iterations"] = model.divergence_log.size();
  doc["divergence_log"] = model.divergence_log;
  doc["files"] = {{"t", stem + "_t.f64"},
                  {"v", stem + "_v.f64"},
                  {"z", stem + "_z.f64"},
                  {"c", stem + "_c.f64"},
                  {"h", stem + "_h.f64"}};
  std::ofstream os(prefix + ".json", std::ios::trunc);
  if (!os) throw IoError("save_checkpoint: cannot open " + prefix + ".json");
  os << doc.dump(1) << "\n";
  if (!os) throw IoError("save_checkpoint: write failed for " + prefix + ".json");

  auto sidecar = [&](const char *tag) {
    return (fs::path(prefix).parent_path() / (stem + std::string("_") + tag + ".f64"))
        .string();
  };
  std::vector<double> buf = detail::matrix_row_major(model.t);
  detail::write_f64_file(sidecar("t"), buf.data(), buf.size());
  buf = detail::matrix_row_major(model.v);
  detail::write_f64_file(sidecar("v"), buf.data(), buf.size());
  buf = detail::matrix_row_major(model.z);
  detail::write_f64_file(sidecar("z"), buf.data(), buf.size());
  buf = detail::matrix_row_major(model.c);
  detail::write_f64_file(sidecar("c"), buf.data(), buf.size());
  std::vector<double> hbuf;
  hbuf.reserve(model.h.data.size() * 2);
  for (const cplx &v : model.h.data) {
    hbuf.push_back(v.real());
    hbuf.push_back(v.imag());
  }
  detail::write_f64_file(sidecar("h"), hbuf.data(), hbuf.size());
}

/// Reads a checkpoint written by save_checkpoint.
inline JointModel load_checkpoint(const std::string &prefix) {
  namespace fs = std::filesystem;
  std::ifstream in(prefix + ".json");
  if (!in) throw IoError("load_checkpoint: cannot open " + prefix + ".json");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("load_checkpoint: invalid JSON: " + std::string(e.what()));
  }
  try {
    if (doc.at("format_version").get<int>() != 1)
      throw FormatError("load_checkpoint: unsupported format_version");
    int F = doc.at("dims").at("bins").get<int>();
    int K = doc.at("dims").at("k_total").get<int>();
    int N = doc.at("dims").at("frames").get<int>();
    int S = doc.at("dims").at("sources").get<int>();
    int J = doc.at("dims").at("dictionaries").get<int>();
    int I = doc.at("dims").at("channels").get<int>();
    fs::path dir = fs::path(prefix).parent_path();
    auto sidecar = [&](const char *tag) {
      return (dir / doc.at("files").at(tag).get<std::string>()).string();
    };
    JointModel model;
    model.t = detail::matrix_from_row_major(
        detail::read_f64_file(sidecar("t"), static_cast<std::size_t>(F) * K), F, K);
    model.v = detail::matrix_from_row_major(
        detail::read_f64_file(sidecar("v"), static_cast<std::size_t>(K) * N), K, N);
    model.z = detail::matrix_from_row_major(
        detail::read_f64_file(sidecar("z"), static_cast<std::size_t>(S) * J), S, J);
    model.c = detail::matrix_from_row_major(
        detail::read_f64_file(sidecar("c"), static_cast<std::size_t>(J) * K), J, K);
    std::vector<double> hbuf = detail::read_f64_file(
        sidecar("h"), static_cast<std::size_t>(F) * S * I * I * 2);
    model.h.resize(F, S, I);
    for (std::size_t i = 0; i < model.h.data.size(); ++i)
      model.h.data[i] = cplx(hbuf[2 * i], hbuf[2 * i + 1]);
    model.divergence_log = doc.at("divergence_log").get<std::vector<double>>();
    model.validate();
    return model;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("load_checkpoint: missing or mistyped field: " +
                      std::string(e.what()));
  }
}

}  // namespace mcnmf

#endif  // MCNMF_MCNMF_HPP_
