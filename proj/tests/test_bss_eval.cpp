// tests/test_bss_eval.cpp

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

#include "mcnmf/bss_eval.hpp"

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "catch_amalgamated.hpp"
#include "mcnmf/rng.hpp"

using Catch::Approx;
using mcnmf::bss_eval;
using mcnmf::decompose_estimate;
using mcnmf::kDbSentinel;
using mcnmf::score_recognition;

namespace {

std::vector<double> white_noise(std::size_t n, std::uint64_t seed) {
  mcnmf::Rng rng(seed, "bss-test");
  std::vector<double> x(n);
  for (auto &v : x) v = rng.gaussian();
  return x;
}

double energy(const std::vector<double> &x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

double dot(const std::vector<double> &a, const std::vector<double> &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("bss_eval: perfect estimate earns the +200 dB sentinels",
          "[bss_eval]") {
  std::vector<double> ref = white_noise(6000, 41);
  mcnmf::SeparationScores scores = bss_eval({ref}, {ref});
  REQUIRE(scores.source_count() == 1);
  CHECK(scores.sdr[0] == kDbSentinel);
  CHECK(scores.sir[0] == kDbSentinel);
  CHECK(scores.sar[0] == kDbSentinel);
}

TEST_CASE("bss_eval: orthogonal noise at 10 dB SNR reads back as 10 dB",
          "[bss_eval]") {
  // Split one white-noise draw into two disjoint frequency bands with a
  // single full-length DFT: the bands are exactly orthogonal at zero lag and
  // orthogonal up to edge leakage under the shifts the projector uses, so
  // the analytic answer is SDR = SAR = 10 dB with no interference term.
  const std::size_t n = 8192;
  std::vector<double> u = white_noise(n, 42);
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, u);
  std::vector<std::complex<double>> lo(n, 0.0), hi(n, 0.0);
  for (std::size_t b = 40; b <= 1600; ++b) {
    lo[b] = spec[b];
    lo[n - b] = spec[n - b];
  }
  for (std::size_t b = 2200; b <= 3800; ++b) {
    hi[b] = spec[b];
    hi[n - b] = spec[n - b];
  }
  std::vector<double> ref, noise;
  fft.inv(ref, lo);
  fft.inv(noise, hi);

  double alpha = std::sqrt(energy(ref) / (10.0 * energy(noise)));
  std::vector<double> est(n);
  for (std::size_t i = 0; i < n; ++i) est[i] = ref[i] + alpha * noise[i];

  mcnmf::SeparationScores scores = bss_eval({est}, {ref});
  CHECK(scores.sdr[0] == Approx(10.0).margin(0.5));
  CHECK(scores.sar[0] == Approx(10.0).margin(0.5));
  CHECK(scores.sir[0] >= 100.0);
}

TEST_CASE("bss_eval: pure interference earns the -200 dB sentinel",
          "[bss_eval]") {
  // Supports separated by more than the 512-tap filter length make the
  // estimate exactly inexpressible as filtered target: zero target
  // component, hence the negative sentinel.
  const std::size_t n = 6000;
  std::vector<double> r1(n, 0.0), r2(n, 0.0);
  mcnmf::Rng rng(43, "bss-test");
  for (std::size_t i = 0; i < 2500; ++i) r1[i] = rng.gaussian();
  for (std::size_t i = 3200; i < n; ++i) r2[i] = rng.gaussian();

  mcnmf::SeparationScores scores = bss_eval({r2, r2}, {r1, r2});
  // Source 0's estimate is pure interference (it is reference 1).
  CHECK(scores.sir[0] == -kDbSentinel);
  CHECK(scores.sir[0] <= -100.0);
  CHECK(scores.sdr[0] == -kDbSentinel);
  CHECK(scores.sar[0] >= 100.0);
  // Source 1's estimate is perfect.
  CHECK(scores.sdr[1] == kDbSentinel);
  CHECK(scores.sir[1] == kDbSentinel);
}

TEST_CASE("bss_eval: a filtered reference counts as allowed distortion",
          "[bss_eval]") {
  // Any filter within the 512-tap allowance must be absorbed by the target
  // projection.  The reference's zero tail keeps the filtered signal inside
  // the evaluated window, so the representation is exact.
  const std::size_t n = 6000;
  std::vector<double> ref = white_noise(n, 44);
  for (std::size_t i = 5600; i < n; ++i) ref[i] = 0.0;
  mcnmf::Rng rng(45, "bss-fir");
  std::vector<double> fir(300);
  for (auto &v : fir) v = rng.uniform(-1.0, 1.0);
  std::vector<double> est(n, 0.0);
  for (std::size_t t = 0; t < 5600; ++t)
    for (std::size_t k = 0; k < fir.size(); ++k) est[t + k] += ref[t] * fir[k];

  mcnmf::SeparationScores scores = bss_eval({est}, {ref});
  CHECK(scores.sdr[0] >= 150.0);
  CHECK(scores.sir[0] >= 150.0);
  CHECK(scores.sar[0] >= 150.0);
}

TEST_CASE("bss_eval: components telescope and ratios obey the ordering",
          "[bss_eval]") {
  const std::size_t n = 5000;
  std::vector<std::vector<double>> refs = {white_noise(n, 46),
                                           white_noise(n, 47)};
  std::vector<std::vector<double>> ests(2);
  for (int s = 0; s < 2; ++s) {
    std::vector<double> extra = white_noise(n, 48 + s);
    ests[s].resize(n);
    for (std::size_t i = 0; i < n; ++i)
      ests[s][i] = refs[s][i] + 0.3 * refs[1 - s][i] + 0.1 * extra[i];
  }

  for (int s = 0; s < 2; ++s) {
    mcnmf::BssComponents comps = decompose_estimate(ests[s], refs, s);
    REQUIRE(comps.target.size() == n + 511);
    REQUIRE(comps.interference.size() == n + 511);
    REQUIRE(comps.artifacts.size() == n + 511);

    // Completeness: components sum to the (zero-padded) estimate.
    double err = 0.0;
    for (std::size_t t = 0; t < comps.target.size(); ++t) {
      double sum = comps.target[t] + comps.interference[t] + comps.artifacts[t];
      double ref_val = t < n ? ests[s][t] : 0.0;
      err += (sum - ref_val) * (sum - ref_val);
    }
    CHECK(std::sqrt(err / energy(ests[s])) < 1e-9);

    // Pairwise orthogonality of the decomposition.
    double et = energy(comps.target);
    double ei = energy(comps.interference);
    double ea = energy(comps.artifacts);
    CHECK(std::abs(dot(comps.target, comps.interference)) <
          1e-6 * std::sqrt(et * ei));
    CHECK(std::abs(dot(comps.target, comps.artifacts)) <
          1e-6 * std::sqrt(et * ea));
    CHECK(std::abs(dot(comps.interference, comps.artifacts)) <
          1e-6 * std::sqrt(ei * ea));
  }

  mcnmf::SeparationScores scores = bss_eval(ests, refs);
  for (int s = 0; s < 2; ++s) {
    CHECK(scores.sdr[s] > -kDbSentinel);
    CHECK(scores.sdr[s] < kDbSentinel);
    CHECK(scores.sir[s] >= scores.sdr[s]);
    CHECK(scores.sar[s] >= scores.sdr[s]);
  }
}

TEST_CASE("bss_eval: unprocessed mixture is a finite near-0 dB baseline",
          "[bss_eval]") {
  const std::size_t n = 6000;
  std::vector<std::vector<double>> refs = {white_noise(n, 49),
                                           white_noise(n, 50)};
  std::vector<double> mix(n);
  for (std::size_t i = 0; i < n; ++i) mix[i] = refs[0][i] + refs[1][i];

  mcnmf::SeparationScores scores = bss_eval({mix, mix}, refs);
  for (int s = 0; s < 2; ++s) {
    // Equal-power competing source: ~0 dB target-to-interference, and the
    // mixture lies in the reference span, so artifacts vanish.
    CHECK(std::abs(scores.sdr[s]) < 2.0);
    CHECK(std::abs(scores.sir[s]) < 2.0);
    CHECK(scores.sar[s] > 100.0);
  }
}

TEST_CASE("bss_eval: permuting estimates with their pairing permutes scores",
          "[bss_eval]") {
  const std::size_t n = 5000;
  std::vector<std::vector<double>> refs = {white_noise(n, 51),
                                           white_noise(n, 52)};
  std::vector<std::vector<double>> ests(2);
  for (int s = 0; s < 2; ++s) {
    ests[s].resize(n);
    for (std::size_t i = 0; i < n; ++i)
      ests[s][i] = refs[s][i] + 0.4 * refs[1 - s][i];
  }

  mcnmf::SeparationScores fwd = bss_eval(ests, refs);
  mcnmf::SeparationScores rev =
      bss_eval({ests[1], ests[0]}, {refs[1], refs[0]});
  for (int s = 0; s < 2; ++s) {
    CHECK(fwd.sdr[s] == Approx(rev.sdr[1 - s]).margin(1e-6));
    CHECK(fwd.sir[s] == Approx(rev.sir[1 - s]).margin(1e-6));
    CHECK(fwd.sar[s] == Approx(rev.sar[1 - s]).margin(1e-6));
  }
}

TEST_CASE("bss_eval: input validation", "[bss_eval]") {
  std::vector<double> ref = white_noise(4000, 53);

  SECTION("zero-energy reference is an undefined metric") {
    std::vector<double> silent(4000, 0.0);
    CHECK_THROWS_AS(bss_eval({ref, ref}, {ref, silent}), mcnmf::DataError);
  }
  SECTION("length mismatch") {
    std::vector<double> shorter(3999, 0.1);
    CHECK_THROWS_AS(bss_eval({shorter}, {ref}), mcnmf::ShapeError);
  }
  SECTION("source count mismatch") {
    CHECK_THROWS_AS(bss_eval({ref, ref}, {ref}), mcnmf::ShapeError);
  }
  SECTION("empty lists") {
    CHECK_THROWS_AS(bss_eval(std::vector<std::vector<double>>{},
                             std::vector<std::vector<double>>{}),
                    mcnmf::ShapeError);
  }
  SECTION("invalid filter length") {
    CHECK_THROWS_AS(bss_eval({ref}, {ref}, 0), mcnmf::ConfigError);
  }
}

TEST_CASE("bss_eval: AudioBuffer overload evaluates channel 1", "[bss_eval]") {
  const std::size_t n = 4000;
  std::vector<double> ref = white_noise(n, 54);

  mcnmf::AudioBuffer est_buf(16000, 2, n);
  est_buf.channels[0] = ref;
  est_buf.channels[1] = white_noise(n, 55);  // ignored by the metric
  mcnmf::AudioBuffer ref_buf(16000, 1, n);
  ref_buf.channels[0] = ref;

  mcnmf::SeparationScores scores = bss_eval(
      std::vector<mcnmf::AudioBuffer>{est_buf},
      std::vector<mcnmf::AudioBuffer>{ref_buf});
  CHECK(scores.sdr[0] == kDbSentinel);

  SECTION("sample-rate mismatch") {
    mcnmf::AudioBuffer wrong_rate(8000, 1, n);
    wrong_rate.channels[0] = ref;
    CHECK_THROWS_AS(bss_eval(std::vector<mcnmf::AudioBuffer>{est_buf},
                             std::vector<mcnmf::AudioBuffer>{wrong_rate}),
                    mcnmf::ConfigError);
  }
}

TEST_CASE("score_recognition: all correct", "[bss_eval]") {
  std::vector<std::vector<int>> truth(4, {0, 1, 2});
  mcnmf::RecognitionScores scores = score_recognition(truth, truth, 3);
  CHECK(scores.accuracy == 1.0);
  CHECK(scores.speaker_error_rate == 0.0);
  REQUIRE(scores.confusion.rows() == 3);
  REQUIRE(scores.confusion.cols() == 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(scores.confusion(i, j) == (i == j ? 4 : 0));
}

TEST_CASE("score_recognition: crafted errors land in the right confusion cells",
          "[bss_eval]") {
  std::vector<std::vector<int>> truth = {{0, 1, 2}, {0, 1, 2}};
  std::vector<std::vector<int>> assigned = {{0, 2, 2}, {1, 1, 2}};
  mcnmf::RecognitionScores scores = score_recognition(assigned, truth, 3);
  CHECK(scores.accuracy == Approx(4.0 / 6.0));
  CHECK(scores.speaker_error_rate == Approx(2.0 / 6.0));
  CHECK(scores.confusion(0, 0) == 1);
  CHECK(scores.confusion(0, 1) == 1);
  CHECK(scores.confusion(1, 1) == 1);
  CHECK(scores.confusion(1, 2) == 1);
  CHECK(scores.confusion(2, 2) == 2);
  // Row sums equal the number of trials per true speaker.
  for (int i = 0; i < 3; ++i) CHECK(scores.confusion.row(i).sum() == 2);
}

TEST_CASE("score_recognition: error rate is one minus accuracy",
          "[bss_eval]") {
  // 879 of 1000 correct: the 87.9%-accuracy operating point maps to a
  // speaker error rate of about 12%.
  std::vector<std::vector<int>> truth(1, std::vector<int>(1000, 0));
  std::vector<std::vector<int>> assigned(1, std::vector<int>(1000, 0));
  for (int i = 879; i < 1000; ++i) assigned[0][i] = 1;
  mcnmf::RecognitionScores scores = score_recognition(assigned, truth, 2);
  CHECK(scores.accuracy == Approx(0.879));
  CHECK(scores.speaker_error_rate == Approx(0.121));
}

TEST_CASE("score_recognition: random assignment sits at chance level",
          "[bss_eval]") {
  const int trials = 1000;
  mcnmf::Rng rng(56, "bss-chance");
  std::vector<std::vector<int>> truth(trials), assigned(trials);
  for (int t = 0; t < trials; ++t) {
    truth[t] = {0, 1, 2};
    assigned[t].resize(3);
    for (auto &a : assigned[t]) a = static_cast<int>(rng.uniform_int(3));
  }
  mcnmf::RecognitionScores scores = score_recognition(assigned, truth, 3);
  // 3000 positions, p = 1/3: four standard deviations is ~0.035.
  CHECK(scores.accuracy == Approx(1.0 / 3.0).margin(0.035));
  for (int i = 0; i < 3; ++i) CHECK(scores.confusion.row(i).sum() == trials);
}

TEST_CASE("score_recognition: input validation", "[bss_eval]") {
  std::vector<std::vector<int>> truth = {{0, 1}, {1, 0}};

  SECTION("trial count mismatch") {
    std::vector<std::vector<int>> assigned = {{0, 1}};
    CHECK_THROWS_AS(score_recognition(assigned, truth, 2), mcnmf::ShapeError);
  }
  SECTION("position count mismatch") {
    std::vector<std::vector<int>> assigned = {{0, 1}, {1}};
    CHECK_THROWS_AS(score_recognition(assigned, truth, 2), mcnmf::ShapeError);
  }
  SECTION("label outside the library") {
    std::vector<std::vector<int>> assigned = {{0, 2}, {1, 0}};
    CHECK_THROWS_AS(score_recognition(assigned, truth, 2), mcnmf::DataError);
    std::vector<std::vector<int>> negative = {{0, -1}, {1, 0}};
    CHECK_THROWS_AS(score_recognition(negative, truth, 2), mcnmf::DataError);
  }
  SECTION("no positions to score") {
    std::vector<std::vector<int>> empty;
    CHECK_THROWS_AS(score_recognition(empty, empty, 2), mcnmf::DataError);
  }
  SECTION("invalid label count") {
    CHECK_THROWS_AS(score_recognition(truth, truth, 0), mcnmf::ConfigError);
  }
}
