// include/mcnmf/experiment.hpp

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

// End-to-end experimental protocol: synthetic corpus generation, per-set
// blind training, joint and sequential testing, and metric aggregation.
//
// The protocol mirrors a speaker-recognition-while-separating evaluation:
//
//   * A fixed set of synthetic speakers is drawn once per experiment seed.
//   * Each training set places every speaker at its own random angle and
//     records them all speaking simultaneously for U_tr utterances; the
//     speaker dictionaries are learned blind from that two-channel mixture
//     (TDOA-initialized spatial covariances, multichannel NMF).  Learned
//     dictionaries are labeled by matching the detected directions to the
//     known training placement.
//   * Test mixtures place the same speakers at fresh angles in shuffled
//     order.  The joint method re-estimates activations, speaker
//     indicators, and spatial covariances together against the fixed
//     library; the sequential baseline separates with the stale
//     training-time spatial covariances and identifies each separated
//     stream independently.
//   * Mixtures where source counting fails are excluded from scoring (and
//     counted); separation quality is scored against the reverberated
//     source images at microphone 1.

#ifndef MCNMF_EXPERIMENT_HPP_
#define MCNMF_EXPERIMENT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcnmf/audio.hpp"
#include "mcnmf/bss_eval.hpp"
#include "mcnmf/common.hpp"
#include "mcnmf/doa.hpp"
#include "mcnmf/mcnmf.hpp"
#include "mcnmf/nmf.hpp"
#include "mcnmf/rng.hpp"
#include "mcnmf/scene.hpp"
#include "mcnmf/stft.hpp"

namespace mcnmf {

/// Corpus shape: who speaks, how much training material each speaker
/// contributes, and how long each test mixture runs.
struct CorpusParams {
  int speaker_count = 3;
  int utterances_train = 20;      // U_tr: utterances per speaker per set
  double utterance_length = 1.5;  // seconds
};

/// Factorization sizes and iteration budgets.
struct ModelParams {
  int k_per_speaker = 10;
  int iterations_train = 1000;
  int iterations_test = 200;
};

/// Evaluation scale: desk-sized by default (3 training sets x 10 test
/// mixtures); the full protocol runs 20 x 50.
struct EvalParams {
  int n_test_mixtures = 10;
  int n_training_sets = 3;
};

/// Acoustic scene parameters shared by all generated scenes (per-scene
/// angles are drawn separately).
struct SceneParams {
  double min_separation_deg = 20.0;
  double rt60 = 0.28;     // seconds
  double drr_db = 6.0;    // direct-to-reverberant ratio
  double mic_spacing = 0.15;  // meters
  int sample_rate = 16000;
};

/// Whole-experiment configuration.  Serializes to a strict JSON schema
/// (unknown keys rejected, missing keys defaulted) so a config file plus a
/// seed pins every downstream artifact.
struct ExperimentConfig {
  CorpusParams corpus;
  ModelParams model;
  SceneParams scene;
  EvalParams eval;
  StftConfig stft;  // 64/32 ms sqrt-Hann analysis; not serialized
  std::uint64_t seed = 0;

  MicArrayGeometry geometry() const {
    MicArrayGeometry g;
    g.spacing = scene.mic_spacing;
    g.sample_rate = scene.sample_rate;
    return g;
  }

  void validate() const {
    if (corpus.speaker_count < 1)
      throw ConfigError("ExperimentConfig: speaker_count must be >= 1");
    if (corpus.utterances_train < 1)
      throw ConfigError("ExperimentConfig: utterances_train must be >= 1");
    if (corpus.utterance_length <= 0.0)
      throw ConfigError("ExperimentConfig: utterance_length must be > 0");
    if (model.k_per_speaker < 1)
      throw ConfigError("ExperimentConfig: k_per_speaker must be >= 1");
    if (model.iterations_train < 1 || model.iterations_test < 1)
      throw ConfigError("ExperimentConfig: iteration counts must be >= 1");
    if (eval.n_test_mixtures < 1 || eval.n_training_sets < 1)
      throw ConfigError("ExperimentConfig: evaluation counts must be >= 1");
    if (scene.min_separation_deg < 0.0)
      throw ConfigError("ExperimentConfig: min_separation_deg must be >= 0");
    if (scene.rt60 < 0.0 || scene.rt60 >= 2.0)
      throw ConfigError("ExperimentConfig: rt60 outside [0, 2)");
    geometry().validate();
    stft.validate(scene.sample_rate);
  }

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"format_version", 1},
        {"seed", seed},
        {"corpus",
         {{"speaker_count", corpus.speaker_count},
          {"utterances_train", corpus.utterances_train},
          {"utterance_length", corpus.utterance_length}}},
        {"model",
         {{"k_per_speaker", model.k_per_speaker},
          {"iterations_train", model.iterations_train},
          {"iterations_test", model.iterations_test}}},
        {"scene",
         {{"min_separation_deg", scene.min_separation_deg},
          {"rt60", scene.rt60},
          {"drr_db", scene.drr_db},
          {"mic_spacing", scene.mic_spacing},
          {"sample_rate", scene.sample_rate}}},
        {"eval",
         {{"n_test_mixtures", eval.n_test_mixtures},
          {"n_training_sets", eval.n_training_sets}}}};
  }

  static ExperimentConfig from_json(const nlohmann::json &doc);
};

namespace detail {

inline void check_known_keys(const nlohmann::json &j,
                             std::initializer_list<const char *> allowed,
                             const std::string &where) {
  if (!j.is_object())
    throw FormatError("ExperimentConfig: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char *key : allowed)
      if (it.key() == key) known = true;
    if (!known)
      throw ConfigError("ExperimentConfig: unknown key '" + it.key() +
                        "' in " + where);
  }
}

template <typename T>
T json_field(const nlohmann::json &j, const char *key, T fallback,
             const std::string &where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("ExperimentConfig: bad value for '" + std::string(key) +
                      "' in " + where + ": " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json &doc) {
  detail::check_known_keys(
      doc, {"format_version", "seed", "corpus", "model", "scene", "eval"},
      "top level");
  int version = detail::json_field(doc, "format_version", 1, "top level");
  if (version != 1)
    throw FormatError("ExperimentConfig: unsupported format_version " +
                      std::to_string(version));
  ExperimentConfig cfg;
  cfg.seed = detail::json_field<std::uint64_t>(doc, "seed", 0, "top level");
  if (doc.contains("corpus")) {
    const auto &c = doc.at("corpus");
    detail::check_known_keys(
        c, {"speaker_count", "utterances_train", "utterance_length"},
        "corpus");
    cfg.corpus.speaker_count =
        detail::json_field(c, "speaker_count", cfg.corpus.speaker_count, "corpus");
    cfg.corpus.utterances_train = detail::json_field(
        c, "utterances_train", cfg.corpus.utterances_train, "corpus");
    cfg.corpus.utterance_length = detail::json_field(
        c, "utterance_length", cfg.corpus.utterance_length, "corpus");
  }
  if (doc.contains("model")) {
    const auto &m = doc.at("model");
    detail::check_known_keys(
        m, {"k_per_speaker", "iterations_train", "iterations_test"}, "model");
    cfg.model.k_per_speaker =
        detail::json_field(m, "k_per_speaker", cfg.model.k_per_speaker, "model");
    cfg.model.iterations_train = detail::json_field(
        m, "iterations_train", cfg.model.iterations_train, "model");
    cfg.model.iterations_test = detail::json_field(
        m, "iterations_test", cfg.model.iterations_test, "model");
  }
  if (doc.contains("scene")) {
    const auto &s = doc.at("scene");
    detail::check_known_keys(s,
                             {"min_separation_deg", "rt60", "drr_db",
                              "mic_spacing", "sample_rate"},
                             "scene");
    cfg.scene.min_separation_deg = detail::json_field(
        s, "min_separation_deg", cfg.scene.min_separation_deg, "scene");
    cfg.scene.rt60 = detail::json_field(s, "rt60", cfg.scene.rt60, "scene");
    cfg.scene.drr_db =
        detail::json_field(s, "drr_db", cfg.scene.drr_db, "scene");
    cfg.scene.mic_spacing =
        detail::json_field(s, "mic_spacing", cfg.scene.mic_spacing, "scene");
    cfg.scene.sample_rate =
        detail::json_field(s, "sample_rate", cfg.scene.sample_rate, "scene");
  }
  if (doc.contains("eval")) {
    const auto &e = doc.at("eval");
    detail::check_known_keys(e, {"n_test_mixtures", "n_training_sets"},
                             "eval");
    cfg.eval.n_test_mixtures = detail::json_field(
        e, "n_test_mixtures", cfg.eval.n_test_mixtures, "eval");
    cfg.eval.n_training_sets = detail::json_field(
        e, "n_training_sets", cfg.eval.n_training_sets, "eval");
  }
  cfg.validate();
  return cfg;
}

/// Speaker label for profile index i ("spk0", "spk1", ...).
inline std::string profile_label(int index) {
  return "spk" + std::to_string(index);
}

/// Inverse of profile_label; throws DataError on anything else.
inline int profile_label_index(const std::string &label) {
  if (label.size() > 3 && label.compare(0, 3, "spk") == 0) {
    try {
      return std::stoi(label.substr(3));
    } catch (const std::exception &) {
    }
  }
  throw DataError("profile_label_index: unrecognized speaker label '" + label +
                  "'");
}

/// The experiment's speakers; fixed across all training sets and scenes.
inline std::vector<SyntheticSpeakerProfile> corpus_profiles(
    const ExperimentConfig &cfg) {
  return make_speaker_profiles(cfg.corpus.speaker_count,
                               derive_seed(cfg.seed, "corpus-profiles"));
}

namespace detail {

inline SceneConfig base_scene_config(const ExperimentConfig &cfg) {
  SceneConfig sc;
  sc.s_count = cfg.corpus.speaker_count;
  sc.min_separation_deg = cfg.scene.min_separation_deg;
  sc.rt60 = cfg.scene.rt60;
  sc.drr_db = cfg.scene.drr_db;
  sc.geometry = cfg.geometry();
  return sc;
}

}  // namespace detail

/// A test mixture: fresh angles, speakers placed in shuffled order.
/// truth_labels[s] is the profile index speaking at position s.
struct TestScene {
  SceneOutput audio;
  SceneConfig config;
  std::vector<int> truth_labels;
  std::uint64_t seed = 0;
  int index = 0;
};

inline TestScene make_test_scene(const ExperimentConfig &cfg,
                                 const std::vector<SyntheticSpeakerProfile> &profiles,
                                 int scene_index) {
  cfg.validate();
  const int s_count = cfg.corpus.speaker_count;
  TestScene scene;
  scene.index = scene_index;
  scene.seed = derive_seed(cfg.seed, "test-scene-" + std::to_string(scene_index));
  scene.config = detail::base_scene_config(cfg);
  scene.config.seed = scene.seed;
  scene.config.utterance_length = cfg.corpus.utterance_length;
  scene.config.angles_deg = SceneConfig::draw_angles(
      s_count, cfg.scene.min_separation_deg, scene.seed);

  scene.truth_labels.resize(s_count);
  std::iota(scene.truth_labels.begin(), scene.truth_labels.end(), 0);
  Rng shuffle_rng(scene.seed, "scene-speaker-order");
  for (int i = s_count - 1; i > 0; --i) {
    int j = static_cast<int>(shuffle_rng.uniform_int(i + 1));
    std::swap(scene.truth_labels[i], scene.truth_labels[j]);
  }
  std::vector<SyntheticSpeakerProfile> placed;
  placed.reserve(s_count);
  for (int s = 0; s < s_count; ++s)
    placed.push_back(profiles[scene.truth_labels[s]]);

  scene.audio = simulate_scene(placed, scene.config);
  return scene;
}

/// A training mixture: all speakers simultaneously for U_tr utterances,
/// profile p at position p.
struct TrainingScene {
  SceneOutput audio;
  SceneConfig config;
  std::uint64_t seed = 0;
  int set_index = 0;
};

inline TrainingScene make_training_scene(
    const ExperimentConfig &cfg,
    const std::vector<SyntheticSpeakerProfile> &profiles, int set_index) {
  cfg.validate();
  TrainingScene scene;
  scene.set_index = set_index;
  scene.seed = derive_seed(cfg.seed, "train-set-" + std::to_string(set_index));
  scene.config = detail::base_scene_config(cfg);
  scene.config.seed = scene.seed;
  scene.config.utterance_length =
      cfg.corpus.utterances_train * cfg.corpus.utterance_length;
  scene.config.angles_deg = SceneConfig::draw_angles(
      cfg.corpus.speaker_count, cfg.scene.min_separation_deg, scene.seed);
  scene.audio = simulate_scene(profiles, scene.config);
  return scene;
}

/// DOA estimate coerced to a known source count.  Over-detection keeps the
/// strongest peaks; under-detection appends fallback angles chosen farthest
/// from the detections.  Used at training time, where the source count is
/// part of the enrollment protocol; test mixtures with a wrong count are
/// excluded instead, never coerced.
inline DoaEstimate localize_known_count(const AudioBuffer &x,
                                        const MicArrayGeometry &geometry,
                                        int s_count) {
  DoaEstimate est = count_and_localize(x, geometry);
  if (est.source_count() == s_count) return est;
  std::cerr << "localize_known_count: detector found " << est.source_count()
            << " sources, expected " << s_count << "; coercing\n";
  DoaEstimate out;
  if (est.source_count() > s_count) {
    std::vector<int> order(est.source_count());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return est.peak_scores[a] > est.peak_scores[b];
    });
    order.resize(s_count);
    std::sort(order.begin(), order.end());
    for (int i : order) {
      out.angles_deg.push_back(est.angles_deg[i]);
      out.tdoas.push_back(est.tdoas[i]);
      out.peak_scores.push_back(est.peak_scores[i]);
    }
    return out;
  }
  out = est;
  while (out.source_count() < s_count) {
    // Farthest-point placement on a coarse angle grid.
    double best_angle = 0.0, best_dist = -1.0;
    for (int g = -60; g <= 60; g += 5) {
      double dist = 1e9;
      for (double a : out.angles_deg) dist = std::min(dist, std::abs(a - g));
      if (out.angles_deg.empty()) dist = std::abs(static_cast<double>(g));
      if (dist > best_dist) {
        best_dist = dist;
        best_angle = g;
      }
    }
    out.angles_deg.push_back(best_angle);
    out.tdoas.push_back(geometry.spacing *
                        std::sin(best_angle * kPi / 180.0) /
                        geometry.speed_of_sound);
    out.peak_scores.push_back(0.0);
  }
  return out;
}

/// Greedy unique matching of detected angles to ground-truth positions by
/// angular distance.  Returns the position index for each detected source.
inline std::vector<int> match_to_true_angles(const std::vector<double> &detected,
                                             const std::vector<double> &truth) {
  if (detected.size() != truth.size())
    throw ShapeError("match_to_true_angles: size mismatch");
  const int n = static_cast<int>(detected.size());
  std::vector<std::tuple<double, int, int>> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      pairs.emplace_back(std::abs(detected[i] - truth[j]), i, j);
  std::sort(pairs.begin(), pairs.end());
  std::vector<int> position(n, -1);
  std::vector<bool> used(n, false);
  for (const auto &[dist, i, j] : pairs) {
    if (position[i] >= 0 || used[j]) continue;
    position[i] = j;
    used[j] = true;
  }
  return position;
}

/// One training set's learned state.  Library dictionaries carry profile
/// labels ("spk<i>") assigned by matching detected training directions to
/// the known placement; h_train holds the training-time spatial
/// covariances the sequential baseline reuses.
struct TrainedSet {
  Library library;
  SpatialCovarianceSet h_train;
  std::vector<double> divergence_log;
  std::vector<double> train_angles_deg;     // true angles, position order
  std::vector<double> detected_angles_deg;  // per model source
  int set_index = 0;
};

/// Trains one set from an already-mixed training scene.  true_angles_deg is
/// the known enrollment placement (profile p at position p); scene_seed is
/// the training scene's own seed, from which the training seed derives.
inline TrainedSet train_from_mixture(const ExperimentConfig &cfg,
                                     const AudioBuffer &mixture,
                                     const std::vector<double> &true_angles_deg,
                                     int set_index, std::uint64_t scene_seed) {
  if (static_cast<int>(true_angles_deg.size()) != cfg.corpus.speaker_count)
    throw ShapeError("train_from_mixture: angle count does not match speakers");
  TrainedSet trained;
  trained.set_index = set_index;
  trained.train_angles_deg = true_angles_deg;

  MultichannelSpectrogram x = stft_multichannel(mixture, cfg.stft);
  DoaEstimate doa = localize_known_count(mixture, cfg.geometry(),
                                         cfg.corpus.speaker_count);
  trained.detected_angles_deg = doa.angles_deg;
  SpatialCovarianceSet h0 = init_spatial_covariance(
      doa, cfg.geometry(), cfg.stft, cfg.corpus.speaker_count);
  auto [library, h_train] = train_blind(
      x, cfg.corpus.speaker_count, cfg.model.k_per_speaker,
      cfg.model.iterations_train, h0, derive_seed(scene_seed, "train-blind"),
      &trained.divergence_log);

  // Model source j listened toward detected angle j; the profile speaking
  // there names dictionary j.
  std::vector<int> position =
      match_to_true_angles(doa.angles_deg, true_angles_deg);
  for (int j = 0; j < library.dictionary_count(); ++j)
    library.speaker_ids[j] = profile_label(position[j]);
  trained.library = std::move(library);
  trained.h_train = std::move(h_train);
  return trained;
}

inline TrainedSet train_one_set(const ExperimentConfig &cfg,
                                const std::vector<SyntheticSpeakerProfile> &profiles,
                                int set_index) {
  TrainingScene ts = make_training_scene(cfg, profiles, set_index);
  return train_from_mixture(cfg, ts.audio.mixture, ts.config.angles_deg,
                            set_index, ts.seed);
}

/// Sequential baseline separation + identification: the library stays
/// fixed, Z is pinned to the identity (stream j = dictionary j), spatial
/// covariances stay at their training-time values, and only activations
/// adapt.  Each separated stream's channel 1 is then identified
/// independently by single-channel activation inference.
struct SequentialResult {
  std::vector<std::string> assignments;  // per stream
  std::vector<MultichannelSpectrogram> separated;
};

inline SequentialResult run_sequential_test(const MultichannelSpectrogram &x,
                                            const Library &library,
                                            const SpatialCovarianceSet &h_train,
                                            int iterations,
                                            std::uint64_t seed) {
  x.validate();
  library.validate();
  const int j_count = library.dictionary_count();
  if (h_train.sources != j_count)
    throw ShapeError("run_sequential_test: spatial covariances do not cover "
                     "every dictionary");
  if (h_train.bins != x.bins() || h_train.channels != x.channel_count())
    throw ShapeError("run_sequential_test: spatial covariance dimensions do "
                     "not match input");
  if (library.basis.rows() != x.bins())
    throw ShapeError("run_sequential_test: library bin count does not match input");
  if (iterations < 1)
    throw ConfigError("run_sequential_test: iterations must be >= 1");

  ObservedCovarianceField xcov = observed_covariances(x);
  JointModel model;
  model.t = library.basis;
  model.v.resize(library.total_k(), x.frames());
  for (int j = 0; j < j_count; ++j) {
    Rng rng(derive_seed(seed, "sequential-v:" + library.speaker_ids[j]));
    model.v.middleRows(library.offset(j), library.per_speaker_k[j]) =
        detail::random_init(library.per_speaker_k[j], x.frames(), &rng);
  }
  model.z = Mat::Identity(j_count, j_count);
  model.c = Mat::Zero(j_count, library.total_k());
  for (int j = 0; j < j_count; ++j)
    for (int k = library.offset(j);
         k < library.offset(j) + library.per_speaker_k[j]; ++k)
      model.c(j, k) = 1.0;
  model.h = h_train;

  for (int it = 0; it < iterations; ++it)
    model.v = update_v(model, xcov).coeffs;

  SequentialResult result;
  for (int j = 0; j < j_count; ++j) {
    MultichannelSpectrogram stream = wiener_multichannel(model, x, j);
    ComplexSpectrogram channel1;
    channel1.data = stream.channels.front();
    channel1.config = stream.config;
    channel1.sample_rate = stream.sample_rate;
    Activations act = infer_activations(
        power_spectrogram(channel1), library, iterations,
        derive_seed(seed, "sequential-id-" + std::to_string(j)));
    result.assignments.push_back(identify_speaker_by_activation(act, library));
    result.separated.push_back(std::move(stream));
  }
  return result;
}

namespace detail {

inline std::vector<double> fit_length(std::vector<double> x, std::size_t n) {
  x.resize(n, 0.0);
  return x;
}

}  // namespace detail

/// Dominant arrival direction of a two-channel stream: whole-signal
/// GCC-PHAT peak with parabolic sub-sample refinement.  A separated stream
/// keeps the spatial signature of whichever source it captured, so this is
/// how a separate-then-identify system recovers which position each of its
/// output streams belongs to.
inline double dominant_stream_angle(const AudioBuffer &stream,
                                    const MicArrayGeometry &geometry) {
  stream.validate();
  geometry.validate();
  if (stream.channel_count() < 2)
    throw ShapeError("dominant_stream_angle: two channels required");
  const int max_lag = geometry.max_delay_samples() + 1;
  Vec corr = gcc_phat(stream.channels[0], stream.channels[1], max_lag);
  int best = 0;
  corr.maxCoeff(&best);
  double lag = best - max_lag;
  if (best > 0 && best + 1 < corr.size()) {
    double left = corr(best - 1), mid = corr(best), right = corr(best + 1);
    double curvature = left - 2.0 * mid + right;
    if (std::abs(curvature) > 1e-12) lag += 0.5 * (left - right) / curvature;
  }
  double sine = lag * geometry.speed_of_sound /
                (geometry.sample_rate * geometry.spacing);
  return std::asin(std::clamp(sine, -1.0, 1.0)) * 180.0 / kPi;
}

/// What the test-time system produced for one scene, before any ground
/// truth enters the picture: detected directions, one speaker label and one
/// separated stream per model source, and (optionally) the sequential
/// baseline's labels with each of its streams' own dominant directions.
struct SceneTestOutput {
  int set_index = 0;
  int scene_index = 0;
  std::uint64_t scene_seed = 0;
  bool excluded = false;
  int detected_count = 0;
  std::vector<double> detected_angles_deg;       // per model source
  std::vector<std::string> assignments;          // per model source
  std::vector<AudioBuffer> separated;            // per model source
  std::vector<std::string> sequential_assignments;  // per stream
  std::vector<double> sequential_angles_deg;        // per stream
  Mat z;  // final joint speaker indicators
};

/// What evaluation should spend time on.
struct EvaluateOptions {
  bool with_sequential = true;
  bool with_separation_scores = true;
  bool keep_audio = false;
};

/// Runs the joint test (and optionally the sequential baseline) on one test
/// mixture.  Mixtures whose detected source count disagrees with the model
/// are marked excluded and left unprocessed.
inline SceneTestOutput run_scene_test(const ExperimentConfig &cfg,
                                      const TrainedSet &trained,
                                      const AudioBuffer &mixture,
                                      std::uint64_t scene_seed,
                                      int scene_index,
                                      bool with_sequential = true) {
  const int s_count = cfg.corpus.speaker_count;
  SceneTestOutput out;
  out.set_index = trained.set_index;
  out.scene_index = scene_index;
  out.scene_seed = scene_seed;

  DoaEstimate doa = count_and_localize(mixture, cfg.geometry());
  out.detected_count = doa.source_count();
  if (out.detected_count != s_count) {
    out.excluded = true;
    return out;
  }
  out.detected_angles_deg = doa.angles_deg;

  MultichannelSpectrogram x = stft_multichannel(mixture, cfg.stft);
  SpatialCovarianceSet h0 =
      init_spatial_covariance(doa, cfg.geometry(), cfg.stft, s_count);
  JointTestResult joint = test_joint(
      x, trained.library, s_count, cfg.model.iterations_test, h0,
      derive_seed(scene_seed,
                  "joint-test-set" + std::to_string(trained.set_index)));
  out.z = joint.z;
  out.assignments = joint.assignments;
  out.separated.reserve(s_count);
  for (int s = 0; s < s_count; ++s)
    out.separated.push_back(istft_multichannel(joint.separated[s]));

  if (with_sequential) {
    SequentialResult seq = run_sequential_test(
        x, trained.library, trained.h_train, cfg.model.iterations_test,
        derive_seed(scene_seed,
                    "sequential-set" + std::to_string(trained.set_index)));
    out.sequential_assignments = seq.assignments;
    // Train-time spatial covariances point at training angles, so stream j
    // captures whichever test source sits nearest in TDOA space; its own
    // dominant direction says which position that was.
    for (const MultichannelSpectrogram &stream : seq.separated)
      out.sequential_angles_deg.push_back(
          dominant_stream_angle(istft_multichannel(stream), cfg.geometry()));
  }
  return out;
}

/// Everything measured on one test scene against one trained set.  Labels
/// are per position; -1 marks positions an excluded scene never scored.
struct SceneEvaluation {
  int set_index = 0;
  int scene_index = 0;
  std::uint64_t scene_seed = 0;
  bool excluded = false;
  int detected_count = 0;
  std::vector<int> truth_labels;
  std::vector<int> joint_labels;
  std::vector<int> sequential_labels;
  std::vector<double> detected_angles_deg;
  SeparationScores separation;        // joint Wiener outputs vs images
  SeparationScores mixture_baseline;  // unprocessed mixture vs images
  std::vector<AudioBuffer> separated_audio;  // per position, when kept
  Mat z;                              // final joint speaker indicators
};

/// Scores one scene's system output against the scene's ground truth:
/// detected directions are matched to the true positions, labels move to
/// position order, and separation quality is measured against the
/// reverberated source images at microphone 1.
inline SceneEvaluation score_scene_test(const ExperimentConfig &cfg,
                                        const SceneTestOutput &output,
                                        const TestScene &scene,
                                        const EvaluateOptions &opts = {}) {
  const int s_count = cfg.corpus.speaker_count;
  SceneEvaluation ev;
  ev.set_index = output.set_index;
  ev.scene_index = output.scene_index;
  ev.scene_seed = output.scene_seed;
  ev.truth_labels = scene.truth_labels;
  ev.detected_count = output.detected_count;
  if (output.excluded) {
    ev.excluded = true;
    return ev;
  }
  ev.detected_angles_deg = output.detected_angles_deg;
  ev.z = output.z;

  // Model source s listened toward detected angle s; map it to the true
  // position for scoring and for pairing with its reference image.
  std::vector<int> position =
      match_to_true_angles(output.detected_angles_deg, scene.config.angles_deg);
  ev.joint_labels.assign(s_count, -1);
  std::vector<AudioBuffer> separated_by_position(s_count);
  for (int s = 0; s < s_count; ++s) {
    ev.joint_labels[position[s]] = profile_label_index(output.assignments[s]);
    separated_by_position[position[s]] = output.separated[s];
  }

  if (!output.sequential_assignments.empty()) {
    std::vector<int> stream_position = match_to_true_angles(
        output.sequential_angles_deg, scene.config.angles_deg);
    ev.sequential_labels.assign(s_count, -1);
    for (int j = 0; j < s_count; ++j)
      ev.sequential_labels[stream_position[j]] =
          profile_label_index(output.sequential_assignments[j]);
  }

  if (opts.with_separation_scores) {
    std::size_t n = scene.audio.mixture.length();
    std::vector<std::vector<double>> references(s_count), estimates(s_count),
        mixture_estimates(s_count);
    for (int s = 0; s < s_count; ++s) {
      references[s] = scene.audio.source_images[s].channels.front();
      estimates[s] = detail::fit_length(
          separated_by_position[s].channels.front(), n);
      mixture_estimates[s] = scene.audio.mixture.channels.front();
    }
    ev.separation = bss_eval(estimates, references);
    ev.mixture_baseline = bss_eval(mixture_estimates, references);
  }

  if (opts.keep_audio) ev.separated_audio = std::move(separated_by_position);
  return ev;
}

/// run_scene_test + score_scene_test for an in-memory scene.
inline SceneEvaluation evaluate_scene(const ExperimentConfig &cfg,
                                      const TrainedSet &trained,
                                      const TestScene &scene,
                                      const EvaluateOptions &opts = {}) {
  SceneTestOutput output =
      run_scene_test(cfg, trained, scene.audio.mixture, scene.seed,
                     scene.index, opts.with_sequential);
  return score_scene_test(cfg, output, scene, opts);
}

/// Aggregate of an experiment run.
struct ExperimentSummary {
  int scenes_total = 0;
  int scenes_excluded = 0;
  RecognitionScores joint;
  RecognitionScores sequential;
  bool has_sequential = false;
  bool has_separation = false;
  double mean_sdr = 0.0;
  double mean_sir = 0.0;
  double mean_sar = 0.0;
  double mean_mixture_sdr = 0.0;
  std::vector<double> per_set_joint_accuracy;
  std::vector<double> per_set_sequential_accuracy;

  nlohmann::json to_json() const {
    nlohmann::json doc{{"scenes_total", scenes_total},
                       {"scenes_excluded", scenes_excluded},
                       {"joint", joint.to_json()},
                       {"per_set_joint_accuracy", per_set_joint_accuracy}};
    if (has_sequential) {
      doc["sequential"] = sequential.to_json();
      doc["per_set_sequential_accuracy"] = per_set_sequential_accuracy;
    }
    if (has_separation) {
      doc["mean_sdr_db"] = mean_sdr;
      doc["mean_sir_db"] = mean_sir;
      doc["mean_sar_db"] = mean_sar;
      doc["mean_mixture_sdr_db"] = mean_mixture_sdr;
    }
    return doc;
  }
};

/// Scores a batch of scene evaluations: recognition over included scenes
/// (joint and, where present, sequential), mean separation ratios, per-set
/// accuracy breakdown.
inline ExperimentSummary summarize_evaluations(
    const std::vector<SceneEvaluation> &evals, int label_count) {
  ExperimentSummary summary;
  std::vector<std::vector<int>> joint_trials, seq_trials, truth_trials;
  std::vector<int> set_indices;
  double sdr = 0.0, sir = 0.0, sar = 0.0, mix_sdr = 0.0;
  int separation_rows = 0;
  for (const SceneEvaluation &ev : evals) {
    ++summary.scenes_total;
    if (ev.excluded) {
      ++summary.scenes_excluded;
      continue;
    }
    truth_trials.push_back(ev.truth_labels);
    joint_trials.push_back(ev.joint_labels);
    if (!ev.sequential_labels.empty()) seq_trials.push_back(ev.sequential_labels);
    set_indices.push_back(ev.set_index);
    for (int s = 0; s < ev.separation.source_count(); ++s) {
      sdr += ev.separation.sdr[s];
      sir += ev.separation.sir[s];
      sar += ev.separation.sar[s];
      mix_sdr += ev.mixture_baseline.sdr[s];
      ++separation_rows;
    }
  }
  if (truth_trials.empty()) {
    std::cerr << "summarize_evaluations: warning: every scene was excluded\n";
    summary.joint.confusion = Eigen::MatrixXi::Zero(label_count, label_count);
    summary.sequential.confusion =
        Eigen::MatrixXi::Zero(label_count, label_count);
    return summary;
  }
  summary.joint = score_recognition(joint_trials, truth_trials, label_count);
  summary.has_sequential = seq_trials.size() == truth_trials.size();
  if (summary.has_sequential)
    summary.sequential = score_recognition(seq_trials, truth_trials, label_count);
  if (separation_rows > 0) {
    summary.has_separation = true;
    summary.mean_sdr = sdr / separation_rows;
    summary.mean_sir = sir / separation_rows;
    summary.mean_sar = sar / separation_rows;
    summary.mean_mixture_sdr = mix_sdr / separation_rows;
  }

  int max_set = 0;
  for (int s : set_indices) max_set = std::max(max_set, s);
  summary.per_set_joint_accuracy.assign(max_set + 1, 0.0);
  summary.per_set_sequential_accuracy.assign(max_set + 1, 0.0);
  for (int set = 0; set <= max_set; ++set) {
    std::vector<std::vector<int>> jt, st, tt;
    for (std::size_t i = 0; i < truth_trials.size(); ++i) {
      if (set_indices[i] != set) continue;
      tt.push_back(truth_trials[i]);
      jt.push_back(joint_trials[i]);
      if (summary.has_sequential) st.push_back(seq_trials[i]);
    }
    if (tt.empty()) continue;
    summary.per_set_joint_accuracy[set] =
        score_recognition(jt, tt, label_count).accuracy;
    if (summary.has_sequential)
      summary.per_set_sequential_accuracy[set] =
          score_recognition(st, tt, label_count).accuracy;
  }
  return summary;
}

/// Runs the whole protocol in memory: corpus, training sets, test scenes,
/// per-scene evaluation.  Scenes are shared across training sets.
inline std::vector<SceneEvaluation> run_experiment(
    const ExperimentConfig &cfg, const EvaluateOptions &opts = {},
    std::ostream *progress = nullptr) {
  cfg.validate();
  std::vector<SyntheticSpeakerProfile> profiles = corpus_profiles(cfg);
  std::vector<TestScene> scenes;
  scenes.reserve(cfg.eval.n_test_mixtures);
  for (int m = 0; m < cfg.eval.n_test_mixtures; ++m)
    scenes.push_back(make_test_scene(cfg, profiles, m));
  if (progress)
    *progress << "generated " << scenes.size() << " test scenes\n";

  std::vector<SceneEvaluation> evals;
  evals.reserve(static_cast<std::size_t>(cfg.eval.n_training_sets) *
                cfg.eval.n_test_mixtures);
  for (int r = 0; r < cfg.eval.n_training_sets; ++r) {
    TrainedSet trained = train_one_set(cfg, profiles, r);
    if (progress)
      *progress << "trained set " << (r + 1) << "/"
                << cfg.eval.n_training_sets << "\n";
    for (const TestScene &scene : scenes) {
      evals.push_back(evaluate_scene(cfg, trained, scene, opts));
      if (progress)
        *progress << "  set " << (r + 1) << " scene " << (scene.index + 1)
                  << (evals.back().excluded ? " excluded\n" : " scored\n");
    }
  }
  return evals;
}

/// Blind separation of a single scene with adaptive dictionaries: the
/// dictionaries are learned on the mixture itself (known source count,
/// TDOA-initialized spatial covariances), then each source is extracted
/// with the multichannel Wiener filter.  Returns per-position scores next
/// to the unprocessed-mixture baseline.
struct SeparationRun {
  SeparationScores separated;
  SeparationScores mixture;
};

namespace detail {

inline SeparationRun score_separation(const SceneOutput &scene,
                                      const std::vector<int> &position,
                                      std::vector<AudioBuffer> separated) {
  const int s_count = static_cast<int>(scene.source_images.size());
  std::size_t n = scene.mixture.length();
  std::vector<std::vector<double>> references(s_count), estimates(s_count),
      mixture_estimates(s_count);
  for (int s = 0; s < s_count; ++s) {
    references[s] = scene.source_images[s].channels.front();
    mixture_estimates[s] = scene.mixture.channels.front();
  }
  for (int s = 0; s < s_count; ++s)
    estimates[position[s]] =
        fit_length(separated[s].channels.front(), n);
  SeparationRun run;
  run.separated = bss_eval(estimates, references);
  run.mixture = bss_eval(mixture_estimates, references);
  return run;
}

}  // namespace detail

inline SeparationRun run_blind_separation(const SceneOutput &scene,
                                          const SceneConfig &scene_config,
                                          const StftConfig &stft_config,
                                          int k_per_speaker, int iterations,
                                          std::uint64_t seed) {
  const int s_count = static_cast<int>(scene.source_images.size());
  MultichannelSpectrogram x = stft_multichannel(scene.mixture, stft_config);
  DoaEstimate doa =
      localize_known_count(scene.mixture, scene_config.geometry, s_count);
  SpatialCovarianceSet h0 = init_spatial_covariance(
      doa, scene_config.geometry, stft_config, s_count);

  ObservedCovarianceField xcov = observed_covariances(x);
  Rng rng(derive_seed(seed, "blind-separation"), "mcnmf-train");
  JointModel model;
  model.t = detail::random_init(x.bins(), s_count * k_per_speaker, &rng);
  model.v = detail::random_init(s_count * k_per_speaker, x.frames(), &rng);
  model.z = Mat::Identity(s_count, s_count);
  model.c = Mat::Zero(s_count, s_count * k_per_speaker);
  for (int k = 0; k < s_count * k_per_speaker; ++k)
    model.c(k / k_per_speaker, k) = 1.0;
  model.h = h0;
  RoundOptions round;
  round.update_t = true;
  round.update_z = false;
  round.update_c = false;
  for (int it = 0; it < iterations; ++it) update_round(&model, xcov, round);

  std::vector<AudioBuffer> separated;
  separated.reserve(s_count);
  for (int s = 0; s < s_count; ++s)
    separated.push_back(istft_multichannel(wiener_multichannel(model, x, s)));
  std::vector<int> position =
      match_to_true_angles(doa.angles_deg, scene.true_angles_deg);
  return detail::score_separation(scene, position, std::move(separated));
}

/// Separation of a single scene with a fixed library (dictionaries frozen,
/// activations/indicators/spatial covariances adapt via the joint test
/// machinery).
inline SeparationRun run_fixed_dictionary_separation(
    const SceneOutput &scene, const SceneConfig &scene_config,
    const StftConfig &stft_config, const Library &library, int iterations,
    std::uint64_t seed) {
  const int s_count = static_cast<int>(scene.source_images.size());
  MultichannelSpectrogram x = stft_multichannel(scene.mixture, stft_config);
  DoaEstimate doa =
      localize_known_count(scene.mixture, scene_config.geometry, s_count);
  SpatialCovarianceSet h0 = init_spatial_covariance(
      doa, scene_config.geometry, stft_config, s_count);
  JointTestResult result = test_joint(x, library, s_count, iterations, h0,
                                      derive_seed(seed, "fixed-dict"));
  std::vector<AudioBuffer> separated;
  separated.reserve(s_count);
  for (int s = 0; s < s_count; ++s)
    separated.push_back(istft_multichannel(result.separated[s]));
  std::vector<int> position =
      match_to_true_angles(doa.angles_deg, scene.true_angles_deg);
  return detail::score_separation(scene, position, std::move(separated));
}

}  // namespace mcnmf

#endif  // MCNMF_EXPERIMENT_HPP_
