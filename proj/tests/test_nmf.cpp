// tests/test_nmf.cpp

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

#include "mcnmf/nmf.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "catch_amalgamated.hpp"
#include "mcnmf/rng.hpp"

using mcnmf::Activations;
using mcnmf::Dictionary;
using mcnmf::Library;
using mcnmf::Mat;
using mcnmf::PowerSpectrogram;

namespace {

Mat random_positive(int rows, int cols, std::uint64_t seed, double offset = 0.1) {
  mcnmf::Rng rng(seed, "nmf-test");
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = offset + rng.uniform();
  return m;
}

Mat normalize_columns(Mat m) {
  for (int c = 0; c < m.cols(); ++c) m.col(c) /= m.col(c).sum();
  return m;
}

Library make_test_library(int bins, const std::vector<int> &ks, std::uint64_t seed) {
  Library lib;
  lib.basis = normalize_columns(
      random_positive(bins, std::accumulate(ks.begin(), ks.end(), 0), seed));
  for (std::size_t j = 0; j < ks.size(); ++j) {
    lib.speaker_ids.push_back("spk" + std::to_string(j + 1));
    lib.per_speaker_k.push_back(ks[j]);
  }
  return lib;
}

}  // namespace

TEST_CASE("is_divergence: identity, hand values, asymmetry", "[nmf]") {
  Mat x = random_positive(5, 7, 1);
  REQUIRE(mcnmf::is_divergence(x, x) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(mcnmf::is_divergence(2.0, 1.0) ==
          Catch::Approx(2.0 - std::log(2.0) - 1.0).epsilon(1e-12));
  REQUIRE(mcnmf::is_divergence(2.0, 1.0) == Catch::Approx(0.306853).margin(1e-6));
  REQUIRE(mcnmf::is_divergence(1.0, 2.0) ==
          Catch::Approx(0.5 - std::log(0.5) - 1.0).epsilon(1e-12));
  REQUIRE(mcnmf::is_divergence(1.0, 2.0) == Catch::Approx(0.193147).margin(1e-6));
  REQUIRE(mcnmf::is_divergence(2.0, 1.0) != mcnmf::is_divergence(1.0, 2.0));
}

TEST_CASE("is_divergence: rejects negatives and shape mismatch", "[nmf]") {
  Mat x = random_positive(3, 3, 2);
  Mat bad = x;
  bad(1, 1) = -0.5;
  REQUIRE_THROWS_AS(mcnmf::is_divergence(bad, x), mcnmf::DataError);
  REQUIRE_THROWS_AS(mcnmf::is_divergence(x, bad), mcnmf::DataError);
  Mat y = random_positive(3, 4, 3);
  REQUIRE_THROWS_AS(mcnmf::is_divergence(x, y), mcnmf::ShapeError);
}

TEST_CASE("update_dictionary: exact reconstruction is a fixed point", "[nmf]") {
  Dictionary t{normalize_columns(random_positive(10, 3, 4))};
  Activations v{random_positive(3, 8, 5)};
  PowerSpectrogram x{t.basis * v.coeffs};
  Dictionary t2 = mcnmf::update_dictionary(x, t, v);
  REQUIRE((t2.basis - t.basis).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("update_dictionary/update_activations: scalar hand evaluation", "[nmf]") {
  // F=K=N=1, x=4, t=1, v=1: x̂=1, raw step multiplies by sqrt((4/1·1)/(1/1)) = 2.
  PowerSpectrogram x{Mat::Constant(1, 1, 4.0)};
  Dictionary t{Mat::Constant(1, 1, 1.0)};
  Activations v{Mat::Constant(1, 1, 1.0)};
  Dictionary t2 = mcnmf::update_dictionary(x, t, v);
  REQUIRE(t2.basis(0, 0) == Catch::Approx(1.0).epsilon(1e-15));  // 2 normalized to 1
  Activations v2 = mcnmf::update_activations(x, t, v);
  REQUIRE(v2.coeffs(0, 0) == Catch::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("update_dictionary: columns sum to one, entries stay positive", "[nmf]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PowerSpectrogram x{random_positive(12, 9, 100 + seed, 0.0)};
    Dictionary t{random_positive(12, 4, 200 + seed)};
    Activations v{random_positive(4, 9, 300 + seed)};
    Dictionary t2 = mcnmf::update_dictionary(x, t, v);
    REQUIRE(t2.basis.minCoeff() > 0.0);
    for (int k = 0; k < t2.k(); ++k)
      REQUIRE(std::abs(t2.basis.col(k).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("update_activations: fixed point and bare-step monotonicity", "[nmf]") {
  Dictionary t{normalize_columns(random_positive(10, 3, 6))};
  Activations v{random_positive(3, 8, 7)};
  PowerSpectrogram x{t.basis * v.coeffs};
  Activations v2 = mcnmf::update_activations(x, t, v);
  REQUIRE((v2.coeffs - v.coeffs).cwiseAbs().maxCoeff() < 1e-12);

  // An activation step on its own never increases the divergence.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PowerSpectrogram xr{random_positive(10, 8, 400 + seed, 0.0)};
    Dictionary tr{random_positive(10, 3, 500 + seed)};
    Activations vr{random_positive(3, 8, 600 + seed)};
    double before = mcnmf::is_divergence(xr.data, tr.basis * vr.coeffs);
    Activations vr2 = mcnmf::update_activations(xr, tr, vr);
    double after = mcnmf::is_divergence(xr.data, tr.basis * vr2.coeffs);
    REQUIRE(after <= before * (1.0 + 1e-9) + 1e-12);
  }
}

TEST_CASE("factorize_round: joint t-then-v step never increases divergence", "[nmf]") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    PowerSpectrogram x{random_positive(10, 8, 700 + seed, 0.0)};
    Dictionary t{random_positive(10, 3, 800 + seed)};
    Activations v{random_positive(3, 8, 900 + seed)};
    double before = mcnmf::is_divergence(x.data, t.basis * v.coeffs);
    mcnmf::factorize_round(x, &t, &v);
    double after = mcnmf::is_divergence(x.data, t.basis * v.coeffs);
    REQUIRE(after <= before * (1.0 + 1e-9) + 1e-12);
    // The round keeps the dictionary normalized.
    for (int k = 0; k < t.k(); ++k)
      REQUIRE(std::abs(t.basis.col(k).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("factorize: divergence log is non-increasing", "[nmf]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    PowerSpectrogram x{random_positive(15, 12, 1000 + seed, 0.0)};
    std::vector<double> log;
    mcnmf::factorize(x, 4, 40, seed, &log);
    REQUIRE(log.size() == 40);
    for (std::size_t i = 1; i < log.size(); ++i)
      REQUIRE(log[i] <= log[i - 1] * (1.0 + 1e-9) + 1e-12);
  }
}

TEST_CASE("factorize: recovers an exact rank-1 factorization", "[nmf]") {
  mcnmf::Rng rng(11, "nmf-test");
  mcnmf::Vec t0(20), v0(15);
  for (int i = 0; i < 20; ++i) t0(i) = 0.2 + rng.uniform();
  for (int i = 0; i < 15; ++i) v0(i) = 0.2 + rng.uniform();
  PowerSpectrogram x{t0 * v0.transpose()};
  auto [t, v] = mcnmf::factorize(x, 1, 100, 123);
  REQUIRE(mcnmf::is_divergence(x.data, t.basis * v.coeffs) < 1e-6);
}

TEST_CASE("factorize: identical columns yield the normalized common column", "[nmf]") {
  mcnmf::Rng rng(12, "nmf-test");
  mcnmf::Vec c(18);
  for (int i = 0; i < 18; ++i) c(i) = 0.3 + rng.uniform();
  Mat x = c.replicate(1, 9);
  auto [t, v] = mcnmf::factorize(PowerSpectrogram{x}, 1, 500, 77);
  mcnmf::Vec expected = c / c.sum();
  REQUIRE((t.basis.col(0) - expected).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("factorize: bit-reproducible under a fixed seed", "[nmf]") {
  PowerSpectrogram x{random_positive(10, 10, 2000, 0.0)};
  auto [t1, v1] = mcnmf::factorize(x, 3, 25, 42);
  auto [t2, v2] = mcnmf::factorize(x, 3, 25, 42);
  REQUIRE((t1.basis.array() == t2.basis.array()).all());
  REQUIRE((v1.coeffs.array() == v2.coeffs.array()).all());
}

TEST_CASE("infer_activations: consistent generative model is explained", "[nmf]") {
  // Well-separated basis columns (each with distinct dominant rows), like
  // the spectra of different speakers; near-identical random columns make
  // the multiplicative updates crawl and would need far more iterations.
  Library lib;
  lib.basis = Mat::Constant(6, 2, 0.05);
  lib.basis.col(0).head(3).setConstant(1.0);
  lib.basis.col(1).tail(3).setConstant(1.0);
  lib.basis = normalize_columns(lib.basis);
  lib.speaker_ids = {"spk1", "spk2"};
  lib.per_speaker_k = {1, 1};
  mcnmf::Rng rng(22, "nmf-test");
  Mat v_true = Mat::Zero(2, 4);
  for (int n = 0; n < 4; ++n)
    for (int k = 0; k < 2; ++k)
      if (rng.uniform() < 0.5) v_true(k, n) = 0.5 + rng.uniform();
  REQUIRE(v_true.sum() > 0.0);
  REQUIRE((v_true.array() == 0.0).any());
  PowerSpectrogram x{lib.basis * v_true};
  std::vector<double> log;
  Activations v = mcnmf::infer_activations(x, lib, 500, 9, &log);
  REQUIRE(mcnmf::is_divergence(x.data, lib.basis * v.coeffs) < 1e-4);
  for (std::size_t i = 1; i < log.size(); ++i)
    REQUIRE(log[i] <= log[i - 1] * (1.0 + 1e-9) + 1e-12);
}

TEST_CASE("infer_activations: zero input drives activations to the floor", "[nmf]") {
  Library lib = make_test_library(6, {2, 2}, 23);
  PowerSpectrogram x{Mat::Zero(6, 4)};
  Activations v = mcnmf::infer_activations(x, lib, 5, 3);
  REQUIRE(v.coeffs.maxCoeff() <= 1e-10);
}

TEST_CASE("infer_activations: determinism and shape checking", "[nmf]") {
  Library lib = make_test_library(6, {2, 2}, 24);
  PowerSpectrogram x{random_positive(6, 5, 25, 0.0)};
  Activations a = mcnmf::infer_activations(x, lib, 30, 5);
  Activations b = mcnmf::infer_activations(x, lib, 30, 5);
  REQUIRE((a.coeffs.array() == b.coeffs.array()).all());
  PowerSpectrogram wrong{random_positive(7, 5, 26, 0.0)};
  REQUIRE_THROWS_AS(mcnmf::infer_activations(wrong, lib, 10, 5), mcnmf::ShapeError);
}

TEST_CASE("identify_speaker_by_activation: argmax of activation mass", "[nmf]") {
  Library lib = make_test_library(6, {2, 3, 2}, 30);

  // All mass in the second dictionary.
  Activations v{Mat::Zero(7, 4)};
  v.coeffs.middleRows(2, 3).setConstant(1.0);
  REQUIRE(mcnmf::identify_speaker_by_activation(v, lib) == "spk2");

  // Tie between dictionaries 1 and 2 breaks toward the lower index.
  Library three = make_test_library(6, {1, 1, 1}, 31);
  Activations tie{Mat::Zero(3, 1)};
  tie.coeffs << 1.0, 1.0, 0.5;
  REQUIRE(mcnmf::identify_speaker_by_activation(tie, three) == "spk1");

  // Random activations match a brute-force summation oracle.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Activations r{random_positive(7, 5, 3000 + seed, 0.0)};
    double best = -1.0;
    int best_j = 0;
    int lo = 0;
    for (int j = 0; j < 3; ++j) {
      double sum = 0.0;
      for (int k = lo; k < lo + lib.per_speaker_k[j]; ++k)
        for (int n = 0; n < 5; ++n) sum += r.coeffs(k, n);
      if (sum > best) {
        best = sum;
        best_j = j;
      }
      lo += lib.per_speaker_k[j];
    }
    REQUIRE(mcnmf::identify_speaker_by_activation(r, lib) ==
            lib.speaker_ids[best_j]);
  }

  Activations empty{Mat::Zero(0, 0)};
  REQUIRE_THROWS_AS(mcnmf::identify_speaker_by_activation(empty, lib),
                    mcnmf::DataError);
}

TEST_CASE("wiener_reconstruct_single: masks form a partition of unity", "[nmf]") {
  Library lib = make_test_library(6, {2, 2}, 40);
  Activations v{random_positive(4, 5, 41)};
  mcnmf::ComplexSpectrogram xt;
  xt.sample_rate = 16000;
  mcnmf::Rng rng(42, "nmf-test");
  xt.data = mcnmf::CMat::NullaryExpr(
      6, 5, [&rng](Eigen::Index, Eigen::Index) { return rng.complex_gaussian(); });

  // Single-dictionary library: mask is identically one.
  Library solo = make_test_library(6, {3}, 43);
  Activations vs{random_positive(3, 5, 44)};
  mcnmf::ComplexSpectrogram y = mcnmf::wiener_reconstruct_single(xt, solo, vs, 0);
  REQUIRE((y.data - xt.data).cwiseAbs().maxCoeff() < 1e-12);

  // Two dictionaries: reconstructions sum to the observation exactly.
  mcnmf::ComplexSpectrogram y0 = mcnmf::wiener_reconstruct_single(xt, lib, v, 0);
  mcnmf::ComplexSpectrogram y1 = mcnmf::wiener_reconstruct_single(xt, lib, v, 1);
  REQUIRE((y0.data + y1.data - xt.data).cwiseAbs().maxCoeff() < 1e-12);

  // Label-based lookup matches index-based lookup; unknown labels throw.
  mcnmf::ComplexSpectrogram yl = mcnmf::wiener_reconstruct_single(xt, lib, v, "spk2");
  REQUIRE((yl.data - y1.data).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE_THROWS_AS(mcnmf::wiener_reconstruct_single(xt, lib, v, "nobody"),
                    mcnmf::DataError);
}

TEST_CASE("wiener_reconstruct_single: disjoint supports separate exactly", "[nmf]") {
  // Dictionary 1 lives on rows 0-2, dictionary 2 on rows 3-5.
  Library lib;
  lib.basis = Mat::Zero(6, 2);
  lib.basis.col(0).head(3).setConstant(1.0 / 3.0);
  lib.basis.col(1).tail(3).setConstant(1.0 / 3.0);
  lib.speaker_ids = {"low", "high"};
  lib.per_speaker_k = {1, 1};
  Activations v{random_positive(2, 4, 50)};
  mcnmf::ComplexSpectrogram xt;
  xt.sample_rate = 16000;
  mcnmf::Rng rng(51, "nmf-test");
  xt.data = mcnmf::CMat::NullaryExpr(
      6, 4, [&rng](Eigen::Index, Eigen::Index) { return rng.complex_gaussian(); });
  mcnmf::ComplexSpectrogram y0 = mcnmf::wiener_reconstruct_single(xt, lib, v, 0);
  mcnmf::ComplexSpectrogram y1 = mcnmf::wiener_reconstruct_single(xt, lib, v, 1);
  REQUIRE((y0.data.topRows(3) - xt.data.topRows(3)).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(y0.data.bottomRows(3).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((y1.data.bottomRows(3) - xt.data.bottomRows(3)).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(y1.data.topRows(3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("library: JSON round trip preserves contents", "[nmf]") {
  Library lib = make_test_library(16, {3, 2}, 60);
  lib.sample_rate = 16000;
  lib.stft_config.window_length_ms = 2.0;  // 32 samples at 16 kHz
  lib.stft_config.hop_length_ms = 1.0;
  lib.stft_config.fft_size = 32;
  std::string path =
      (std::filesystem::temp_directory_path() / "mcnmf_library.json").string();
  mcnmf::save_library(lib, path);
  Library back = mcnmf::load_library(path);
  REQUIRE(back.speaker_ids == lib.speaker_ids);
  REQUIRE(back.per_speaker_k == lib.per_speaker_k);
  REQUIRE(back.sample_rate == lib.sample_rate);
  REQUIRE(back.stft_config.fft_size == 32);
  REQUIRE(back.stft_config.window_length_ms == lib.stft_config.window_length_ms);
  REQUIRE(back.basis.rows() == 16);
  REQUIRE((back.basis - lib.basis).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("library: malformed files are rejected", "[nmf]") {
  namespace fs = std::filesystem;
  REQUIRE_THROWS_AS(mcnmf::load_library((fs::temp_directory_path() / "absent.json").string()),
                    mcnmf::IoError);
  std::string bad = (fs::temp_directory_path() / "mcnmf_bad_library.json").string();
  {
    std::ofstream os(bad);
    os << "{ not json";
  }
  REQUIRE_THROWS_AS(mcnmf::load_library(bad), mcnmf::FormatError);
  {
    std::ofstream os(bad);
    os << R"({"format_version": 99, "sample_rate": 16000, "stft": {"window_ms": 64, "hop_ms": 32, "fft_size": 1024}, "speakers": [], "basis": []})";
  }
  REQUIRE_THROWS_AS(mcnmf::load_library(bad), mcnmf::FormatError);
}
