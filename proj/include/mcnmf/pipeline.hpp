// include/mcnmf/pipeline.hpp

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

// File-facing batch pipeline behind the command-line tool: simulate a
// corpus to disk, train per-set models, test against stored scenes, score
// stored results, sweep a parameter.  Directory contract:
//
//   corpus_dir/                      written by cmd_simulate
//     config.json                    resolved experiment configuration
//     corpus.json                    speaker-profile summary
//     train/set<r>/                  one training scene per set (1-based)
//       mixture.wav image<s>.wav dry<s>.wav manifest.json speakers.json
//     test/scene<m>/                 shared test scenes (1-based)
//       (same files)
//
//   model_dir/set<r>/                written by cmd_train
//     library.json h_train.json meta.json
//
//   results_dir/                     written by cmd_test
//     report.json
//     set<r>/scene<m>/assignments.json sep<s>.wav
//
// Every output lands via a temporary name plus rename, so a crashed run
// never leaves a half-written file behind.

#ifndef MCNMF_PIPELINE_HPP_
#define MCNMF_PIPELINE_HPP_

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mcnmf/audio.hpp"
#include "mcnmf/common.hpp"
#include "mcnmf/experiment.hpp"
#include "mcnmf/nmf.hpp"
#include "mcnmf/scene.hpp"

namespace mcnmf {

namespace detail {

inline void atomic_write_text(const std::filesystem::path &path,
                              const std::string &text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void atomic_write_json(const std::filesystem::path &path,
                              const nlohmann::json &doc) {
  atomic_write_text(path, doc.dump(2) + "\n");
}

inline nlohmann::json read_json_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

/// Fixed-precision decimal rendering keeps CSV output byte-stable.
inline std::string csv_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

inline std::string csv_quote(const std::string &s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += "\"";
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Spatial-covariance serialization (training-time H, reused at test time by
// the sequential baseline).

inline void save_spatial_covariances(const SpatialCovarianceSet &h,
                                     const std::filesystem::path &path) {
  std::vector<double> flat;
  flat.reserve(h.data.size() * 2);
  for (const cplx &v : h.data) {
    flat.push_back(v.real());
    flat.push_back(v.imag());
  }
  detail::atomic_write_json(path, nlohmann::json{{"format_version", 1},
                                                 {"bins", h.bins},
                                                 {"sources", h.sources},
                                                 {"channels", h.channels},
                                                 {"data", flat}});
}

inline SpatialCovarianceSet load_spatial_covariances(
    const std::filesystem::path &path) {
  nlohmann::json doc = detail::read_json_file(path);
  SpatialCovarianceSet h;
  try {
    h.resize(doc.at("bins").get<int>(), doc.at("sources").get<int>(),
             doc.at("channels").get<int>());
    std::vector<double> flat = doc.at("data").get<std::vector<double>>();
    if (flat.size() != h.data.size() * 2)
      throw DataError("spatial covariance data length mismatch in " +
                      path.string());
    for (std::size_t i = 0; i < h.data.size(); ++i)
      h.data[i] = cplx(flat[2 * i], flat[2 * i + 1]);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("bad spatial covariance file " + path.string() + ": " +
                      e.what());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Trained-set persistence.

inline void save_trained_set(const TrainedSet &trained,
                             const std::filesystem::path &dir) {
  namespace fs = std::filesystem;
  fs::path staging = dir;
  staging += ".tmp";
  fs::remove_all(staging);
  fs::create_directories(staging);
  save_library(trained.library, (staging / "library.json").string());
  save_spatial_covariances(trained.h_train, staging / "h_train.json");
  detail::atomic_write_json(
      staging / "meta.json",
      nlohmann::json{{"format_version", 1},
                     {"set_index", trained.set_index},
                     {"train_angles_deg", trained.train_angles_deg},
                     {"detected_angles_deg", trained.detected_angles_deg},
                     {"divergence_log", trained.divergence_log}});
  fs::remove_all(dir);
  fs::rename(staging, dir);
}

inline TrainedSet load_trained_set(const std::filesystem::path &dir) {
  TrainedSet trained;
  trained.library = load_library((dir / "library.json").string());
  trained.h_train = load_spatial_covariances(dir / "h_train.json");
  nlohmann::json meta = detail::read_json_file(dir / "meta.json");
  try {
    trained.set_index = meta.at("set_index").get<int>();
    trained.train_angles_deg =
        meta.at("train_angles_deg").get<std::vector<double>>();
    trained.detected_angles_deg =
        meta.at("detected_angles_deg").get<std::vector<double>>();
    trained.divergence_log =
        meta.at("divergence_log").get<std::vector<double>>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("bad trained-set meta " + (dir / "meta.json").string() +
                      ": " + e.what());
  }
  return trained;
}

// ---------------------------------------------------------------------------
// Scene persistence (save_scene plus the speaker-truth sidecar).

inline void write_scene_dir(const SceneOutput &scene, const SceneConfig &config,
                            const std::vector<int> &truth_labels,
                            const std::filesystem::path &dir) {
  namespace fs = std::filesystem;
  fs::path staging = dir;
  staging += ".tmp";
  fs::remove_all(staging);
  save_scene(scene, config, staging.string());
  detail::atomic_write_json(
      staging / "speakers.json",
      nlohmann::json{{"format_version", 1}, {"labels", truth_labels}});
  fs::remove_all(dir);
  fs::rename(staging, dir);
}

/// Rebuilds a TestScene from a scene directory; the inverse of
/// write_scene_dir as far as evaluation needs (audio, placement, truth).
inline TestScene load_scene_dir(const std::filesystem::path &dir,
                                int scene_index) {
  TestScene scene;
  scene.index = scene_index;
  nlohmann::json manifest = detail::read_json_file(dir / "manifest.json");
  try {
    scene.seed = manifest.at("seed").get<std::uint64_t>();
    scene.config.seed = scene.seed;
    scene.config.rt60 = manifest.at("rt60").get<double>();
    scene.config.drr_db = manifest.at("drr_db").get<double>();
    scene.config.utterance_length =
        manifest.at("utterance_length").get<double>();
    scene.config.geometry.spacing =
        manifest.at("geometry").at("spacing").get<double>();
    scene.config.geometry.speed_of_sound =
        manifest.at("geometry").at("speed_of_sound").get<double>();
    scene.config.geometry.sample_rate =
        manifest.at("sample_rate").get<int>();
    scene.config.angles_deg =
        manifest.at("true_angles_deg").get<std::vector<double>>();
    scene.config.s_count = static_cast<int>(scene.config.angles_deg.size());
    scene.audio.true_angles_deg = scene.config.angles_deg;
    scene.audio.true_tdoas =
        manifest.at("true_tdoas_sec").get<std::vector<double>>();
    scene.audio.mixture = load_wav((dir / "mixture.wav").string());
    for (const auto &src : manifest.at("sources")) {
      scene.audio.source_images.push_back(
          load_wav((dir / src.at("image").get<std::string>()).string()));
      scene.audio.dry_sources.push_back(
          load_wav((dir / src.at("dry").get<std::string>()).string()));
    }
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("bad scene manifest " + (dir / "manifest.json").string() +
                      ": " + e.what());
  }
  nlohmann::json speakers = detail::read_json_file(dir / "speakers.json");
  try {
    scene.truth_labels = speakers.at("labels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("bad speaker sidecar " +
                      (dir / "speakers.json").string() + ": " + e.what());
  }
  if (scene.truth_labels.size() != scene.audio.source_images.size())
    throw DataError("speaker labels do not match source count in " +
                    dir.string());
  return scene;
}

namespace detail {

inline std::filesystem::path set_dir_name(int set_index) {
  return "set" + std::to_string(set_index + 1);
}

inline std::filesystem::path scene_dir_name(int scene_index) {
  return "scene" + std::to_string(scene_index + 1);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate: synthesize the corpus to disk.

struct SimulateReport {
  int training_scenes = 0;
  int test_scenes = 0;
  std::filesystem::path root;
};

inline SimulateReport cmd_simulate(const ExperimentConfig &cfg,
                                   const std::filesystem::path &out_dir,
                                   std::ostream *progress = nullptr) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out_dir / "train");
  fs::create_directories(out_dir / "test");
  detail::atomic_write_json(out_dir / "config.json", cfg.to_json());

  std::vector<SyntheticSpeakerProfile> profiles = corpus_profiles(cfg);
  nlohmann::json corpus{{"format_version", 1},
                        {"speaker_count", cfg.corpus.speaker_count},
                        {"profiles", nlohmann::json::array()}};
  for (int p = 0; p < cfg.corpus.speaker_count; ++p)
    corpus["profiles"].push_back(
        {{"label", profile_label(p)}, {"pitch_hz", profiles[p].pitch}});
  detail::atomic_write_json(out_dir / "corpus.json", corpus);

  SimulateReport report;
  report.root = out_dir;
  std::vector<int> identity(cfg.corpus.speaker_count);
  std::iota(identity.begin(), identity.end(), 0);
  for (int r = 0; r < cfg.eval.n_training_sets; ++r) {
    TrainingScene ts = make_training_scene(cfg, profiles, r);
    write_scene_dir(ts.audio, ts.config, identity,
                    out_dir / "train" / detail::set_dir_name(r));
    ++report.training_scenes;
    if (progress)
      *progress << "simulate: training set " << (r + 1) << "/"
                << cfg.eval.n_training_sets << "\n";
  }
  for (int m = 0; m < cfg.eval.n_test_mixtures; ++m) {
    TestScene scene = make_test_scene(cfg, profiles, m);
    write_scene_dir(scene.audio, scene.config, scene.truth_labels,
                    out_dir / "test" / detail::scene_dir_name(m));
    ++report.test_scenes;
    if (progress)
      *progress << "simulate: test scene " << (m + 1) << "/"
                << cfg.eval.n_test_mixtures << "\n";
  }
  return report;
}

// ---------------------------------------------------------------------------
// train: learn one model per stored training scene.

struct TrainReport {
  int sets = 0;
  std::vector<std::filesystem::path> set_dirs;
};

inline TrainReport cmd_train(const ExperimentConfig &cfg,
                             const std::filesystem::path &corpus_dir,
                             const std::filesystem::path &model_dir,
                             std::ostream *progress = nullptr) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(model_dir);
  TrainReport report;
  for (int r = 0; r < cfg.eval.n_training_sets; ++r) {
    fs::path scene_dir = corpus_dir / "train" / detail::set_dir_name(r);
    if (!fs::exists(scene_dir / "manifest.json"))
      throw IoError("cmd_train: missing training scene " + scene_dir.string());
    TestScene stored = load_scene_dir(scene_dir, r);
    TrainedSet trained =
        train_from_mixture(cfg, stored.audio.mixture,
                           stored.config.angles_deg, r, stored.seed);
    fs::path out = model_dir / detail::set_dir_name(r);
    save_trained_set(trained, out);
    report.set_dirs.push_back(out);
    ++report.sets;
    if (progress)
      *progress << "train: set " << (r + 1) << "/" << cfg.eval.n_training_sets
                << " done (" << trained.library.total_k() << " basis columns)\n";
  }
  return report;
}

// ---------------------------------------------------------------------------
// test: run the joint (and sequential) test against stored scenes.

struct TestReport {
  int trials_total = 0;
  int trials_excluded = 0;
  std::vector<std::pair<int, int>> excluded;  // (set, scene), 0-based

  nlohmann::json to_json() const {
    nlohmann::json doc{{"format_version", 1},
                       {"trials_total", trials_total},
                       {"trials_excluded", trials_excluded},
                       {"excluded", nlohmann::json::array()}};
    for (auto [r, m] : excluded)
      doc["excluded"].push_back({{"set", r}, {"scene", m}});
    return doc;
  }
};

namespace detail {

/// Runs one stored scene against one trained set and writes its result
/// directory.  Returns whether the scene was excluded.
inline bool test_one_stored_scene(const ExperimentConfig &cfg,
                                  const TrainedSet &trained,
                                  const std::filesystem::path &corpus_dir,
                                  const std::filesystem::path &results_dir,
                                  int set_index, int scene_index,
                                  bool with_sequential) {
  namespace fs = std::filesystem;
  fs::path scene_dir = corpus_dir / "test" / scene_dir_name(scene_index);
  nlohmann::json manifest = read_json_file(scene_dir / "manifest.json");
  std::uint64_t scene_seed;
  try {
    scene_seed = manifest.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("bad scene manifest " + scene_dir.string() + ": " +
                      e.what());
  }
  AudioBuffer mixture = load_wav((scene_dir / "mixture.wav").string());
  SceneTestOutput out = run_scene_test(cfg, trained, mixture, scene_seed,
                                       scene_index, with_sequential);

  fs::path out_dir =
      results_dir / set_dir_name(set_index) / scene_dir_name(scene_index);
  fs::path staging = out_dir;
  staging += ".tmp";
  fs::remove_all(staging);
  fs::create_directories(staging);
  nlohmann::json doc{{"format_version", 1},
                     {"scene_seed", out.scene_seed},
                     {"excluded", out.excluded},
                     {"detected_count", out.detected_count}};
  if (!out.excluded) {
    doc["detected_angles_deg"] = out.detected_angles_deg;
    doc["assignments"] = out.assignments;
    std::vector<std::vector<double>> z_rows;
    for (int i = 0; i < out.z.rows(); ++i) {
      z_rows.emplace_back();
      for (int j = 0; j < out.z.cols(); ++j)
        z_rows.back().push_back(out.z(i, j));
    }
    doc["z"] = z_rows;
    if (!out.sequential_assignments.empty())
      doc["sequential"] = {{"assignments", out.sequential_assignments},
                           {"angles_deg", out.sequential_angles_deg}};
    for (std::size_t s = 0; s < out.separated.size(); ++s)
      save_wav(out.separated[s],
               (staging / ("sep" + std::to_string(s + 1) + ".wav")).string());
  }
  atomic_write_json(staging / "assignments.json", doc);
  fs::remove_all(out_dir);
  fs::rename(staging, out_dir);
  return out.excluded;
}

}  // namespace detail

inline TestReport cmd_test(const ExperimentConfig &cfg,
                           const std::filesystem::path &model_dir,
                           const std::filesystem::path &corpus_dir,
                           const std::filesystem::path &results_dir,
                           bool with_sequential = true,
                           std::ostream *progress = nullptr, int jobs = 1) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (jobs < 1) throw ConfigError("cmd_test: jobs must be >= 1");
  fs::create_directories(results_dir);
  TestReport report;
  const int scene_count = cfg.eval.n_test_mixtures;
  for (int r = 0; r < cfg.eval.n_training_sets; ++r) {
    TrainedSet trained =
        load_trained_set(model_dir / detail::set_dir_name(r));
    trained.set_index = r;

    // Scenes are independent and write disjoint directories, so they can
    // run on worker threads; results stay identical to a sequential run.
    std::vector<char> excluded(scene_count, 0);
    std::vector<std::exception_ptr> failures(scene_count);
    std::atomic<int> next{0};
    auto worker = [&] {
      for (int m = next.fetch_add(1); m < scene_count; m = next.fetch_add(1)) {
        try {
          excluded[m] = detail::test_one_stored_scene(
              cfg, trained, corpus_dir, results_dir, r, m, with_sequential);
        } catch (...) {
          failures[m] = std::current_exception();
        }
      }
    };
    if (jobs == 1 || scene_count == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < std::min(jobs, scene_count); ++t)
        pool.emplace_back(worker);
      for (std::thread &t : pool) t.join();
    }
    for (int m = 0; m < scene_count; ++m)
      if (failures[m]) std::rethrow_exception(failures[m]);

    for (int m = 0; m < scene_count; ++m) {
      ++report.trials_total;
      if (excluded[m]) {
        ++report.trials_excluded;
        report.excluded.emplace_back(r, m);
      }
      if (progress)
        *progress << "test: set " << (r + 1) << " scene " << (m + 1)
                  << (excluded[m] ? " excluded\n" : " done\n");
    }
  }
  detail::atomic_write_json(results_dir / "report.json", report.to_json());
  return report;
}

// ---------------------------------------------------------------------------
// evaluate: score stored results against stored truth.

struct EvaluateReport {
  ExperimentSummary summary;
  int scenes_missing = 0;  // result directories absent or unreadable
  std::filesystem::path csv_path;
  std::filesystem::path summary_path;
};

inline EvaluateReport cmd_evaluate(const std::filesystem::path &corpus_dir,
                                   const std::filesystem::path &results_dir,
                                   const std::filesystem::path &out_csv,
                                   std::ostream *progress = nullptr) {
  namespace fs = std::filesystem;
  ExperimentConfig cfg =
      ExperimentConfig::from_json(detail::read_json_file(corpus_dir / "config.json"));
  const int s_count = cfg.corpus.speaker_count;

  EvaluateOptions opts;
  opts.with_separation_scores = true;
  std::vector<SceneEvaluation> evals;
  EvaluateReport report;

  std::ostringstream csv;
  csv << "set,scene,scene_seed,position,true_label,assigned_label,"
         "sequential_label,sdr_db,sir_db,sar_db,mixture_sdr_db\n";

  for (int m = 0; m < cfg.eval.n_test_mixtures; ++m) {
    fs::path scene_path = corpus_dir / "test" / detail::scene_dir_name(m);
    TestScene scene = load_scene_dir(scene_path, m);
    for (int r = 0; r < cfg.eval.n_training_sets; ++r) {
      fs::path result_path =
          results_dir / detail::set_dir_name(r) / detail::scene_dir_name(m);
      if (!fs::exists(result_path / "assignments.json")) {
        std::cerr << "cmd_evaluate: warning: missing results for set "
                  << (r + 1) << " scene " << (m + 1) << "; skipping\n";
        ++report.scenes_missing;
        continue;
      }
      nlohmann::json doc =
          detail::read_json_file(result_path / "assignments.json");
      SceneTestOutput out;
      out.set_index = r;
      out.scene_index = m;
      try {
        out.scene_seed = doc.at("scene_seed").get<std::uint64_t>();
        out.excluded = doc.at("excluded").get<bool>();
        out.detected_count = doc.at("detected_count").get<int>();
        if (!out.excluded) {
          out.detected_angles_deg =
              doc.at("detected_angles_deg").get<std::vector<double>>();
          out.assignments =
              doc.at("assignments").get<std::vector<std::string>>();
          if (doc.contains("sequential")) {
            out.sequential_assignments =
                doc.at("sequential").at("assignments")
                    .get<std::vector<std::string>>();
            out.sequential_angles_deg =
                doc.at("sequential").at("angles_deg")
                    .get<std::vector<double>>();
          }
        }
      } catch (const nlohmann::json::exception &e) {
        throw FormatError("bad result file " +
                          (result_path / "assignments.json").string() + ": " +
                          e.what());
      }
      if (!out.excluded)
        for (int s = 0; s < s_count; ++s)
          out.separated.push_back(load_wav(
              (result_path / ("sep" + std::to_string(s + 1) + ".wav"))
                  .string()));

      SceneEvaluation ev = score_scene_test(cfg, out, scene, opts);
      if (!ev.excluded) {
        for (int s = 0; s < s_count; ++s) {
          csv << (r + 1) << "," << (m + 1) << "," << ev.scene_seed << "," << s
              << "," << profile_label(ev.truth_labels[s]) << ","
              << profile_label(ev.joint_labels[s]) << ",";
          if (!ev.sequential_labels.empty())
            csv << profile_label(ev.sequential_labels[s]);
          csv << "," << detail::csv_number(ev.separation.sdr[s]) << ","
              << detail::csv_number(ev.separation.sir[s]) << ","
              << detail::csv_number(ev.separation.sar[s]) << ","
              << detail::csv_number(ev.mixture_baseline.sdr[s]) << "\n";
        }
      }
      evals.push_back(std::move(ev));
      if (progress)
        *progress << "evaluate: set " << (r + 1) << " scene " << (m + 1)
                  << (evals.back().excluded ? " excluded\n" : " scored\n");
    }
  }

  report.summary = summarize_evaluations(evals, s_count);
  if (report.scenes_missing > 0)
    std::cerr << "cmd_evaluate: warning: " << report.scenes_missing
              << " result(s) missing; summary covers the stored subset\n";
  fs::path summary_path = out_csv;
  summary_path.replace_extension(".summary.json");
  detail::atomic_write_text(out_csv, csv.str());
  nlohmann::json summary_doc = report.summary.to_json();
  summary_doc["results_missing"] = report.scenes_missing;
  detail::atomic_write_json(summary_path, summary_doc);
  report.csv_path = out_csv;
  report.summary_path = summary_path;
  return report;
}

// ---------------------------------------------------------------------------
// sweep: re-run the in-memory experiment across one parameter's values.

struct SweepPoint {
  int value = 0;
  bool ok = false;
  std::string error;
  ExperimentSummary summary;
};

struct SweepReport {
  std::string parameter;
  std::vector<SweepPoint> points;
};

inline SweepReport cmd_sweep(const ExperimentConfig &base_cfg,
                             const std::string &parameter,
                             const std::vector<int> &values,
                             const std::filesystem::path &out_csv,
                             std::ostream *progress = nullptr) {
  if (parameter != "k" && parameter != "utr")
    throw ConfigError("cmd_sweep: parameter must be 'k' or 'utr'");
  if (values.empty()) throw ConfigError("cmd_sweep: no values given");

  SweepReport report;
  report.parameter = parameter;
  std::ostringstream csv;
  csv << "parameter,value,status,scenes_total,scenes_excluded,"
         "joint_accuracy,speaker_error_rate,note\n";
  for (int value : values) {
    ExperimentConfig cfg = base_cfg;
    if (parameter == "k")
      cfg.model.k_per_speaker = value;
    else
      cfg.corpus.utterances_train = value;
    SweepPoint point;
    point.value = value;
    try {
      cfg.validate();
      EvaluateOptions opts;
      opts.with_sequential = false;
      opts.with_separation_scores = false;
      std::vector<SceneEvaluation> evals = run_experiment(cfg, opts, progress);
      point.summary =
          summarize_evaluations(evals, cfg.corpus.speaker_count);
      point.ok = true;
      csv << parameter << "," << value << ",ok,"
          << point.summary.scenes_total << ","
          << point.summary.scenes_excluded << ","
          << detail::csv_number(point.summary.joint.accuracy) << ","
          << detail::csv_number(point.summary.joint.speaker_error_rate)
          << ",\n";
    } catch (const std::exception &e) {
      point.error = e.what();
      std::cerr << "cmd_sweep: " << parameter << "=" << value
                << " failed: " << e.what() << "; continuing\n";
      csv << parameter << "," << value << ",error,,,,,"
          << detail::csv_quote(point.error) << "\n";
    }
    if (progress)
      *progress << "sweep: " << parameter << "=" << value
                << (point.ok ? " done\n" : " failed\n");
    report.points.push_back(std::move(point));
  }
  detail::atomic_write_text(out_csv, csv.str());
  return report;
}

}  // namespace mcnmf

#endif  // MCNMF_PIPELINE_HPP_
