// include/mcnmf/common.hpp

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

#ifndef MCNMF_COMMON_HPP_
#define MCNMF_COMMON_HPP_

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mcnmf {

/// Numerical flooring constant used throughout: denominators, matrix loads
/// before inversion, and log arguments are kept >= kEps (or >= kEps * I for
/// matrices) so multiplicative updates and divergences stay finite.
constexpr double kEps = 1e-12;

constexpr double kPi = 3.14159265358979323846;

/// Speed of sound in air [m/s] used for microphone-array geometry.
constexpr double kSpeedOfSound = 343.0;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using cplx = std::complex<double>;

/// Small square complex matrix holding one channel-by-channel covariance.
/// Capacity is fixed at 8x8 so per-bin temporaries live on the stack; the
/// runtime dimension is the channel count I (typically 2).
using CovMat =
    Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 8, 8>;

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

/// Malformed or unsupported file contents (WAV headers, JSON manifests,
/// checkpoint sidecars).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string &msg) : Error(msg) {}
};

/// Dimension mismatches and out-of-range indices between caller-supplied
/// objects (e.g. dictionary rows vs. spectrogram bins).
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string &msg) : Error(msg) {}
};

/// Semantically invalid data: empty signals, zero-energy references,
/// non-finite samples, labels that do not exist in a library.
class DataError : public Error {
 public:
  explicit DataError(const std::string &msg) : Error(msg) {}
};

/// Failures of the numerical routines themselves (non-convergent
/// eigendecompositions, non-finite intermediates that flooring cannot fix).
class NumericError : public Error {
 public:
  explicit NumericError(const std::string &msg) : Error(msg) {}
};

/// Filesystem-level failures (missing files, unwritable directories).
class IoError : public Error {
 public:
  explicit IoError(const std::string &msg) : Error(msg) {}
};

/// Invalid configuration values (negative counts, unknown keys where a
/// closed set is expected, inconsistent sample rates).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string &msg) : Error(msg) {}
};

namespace detail {

inline void require(bool cond, const std::string &msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

}  // namespace mcnmf

#endif  // MCNMF_COMMON_HPP_
