// tools/mcnmf_cli.cpp

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

// Command-line front end for the batch pipeline.
//
//   mcnmf simulate --out corpus/ [--config cfg.json] [--seed N] [--full-scale]
//   mcnmf train    --corpus corpus/ --out model/ [--config ...] [--seed N]
//   mcnmf test     --model model/ --corpus corpus/ --out results/ [--jobs N]
//   mcnmf evaluate --corpus corpus/ --results results/ --out metrics.csv
//   mcnmf sweep    --parameter k --values 8,15,30 --out sweep.csv [--config ...]
//
// Exit codes: 0 success, 1 usage error, 2 data/configuration error,
// 3 numerical failure.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcnmf/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool full_scale = false;
};

/// Attaches the shared --config/--seed/--full-scale options.
void add_common(CLI::App *cmd, CommonArgs *args) {
  cmd->add_option("--config", args->config_path,
                  "Experiment configuration JSON (defaults used if omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args->seed, "Override the configuration seed")
      ->each([args](const std::string &) { args->seed_given = true; });
  cmd->add_flag("--full-scale", args->full_scale,
                "Full protocol scale: 20 training sets x 50 test mixtures");
}

mcnmf::ExperimentConfig resolve_config(const CommonArgs &args) {
  mcnmf::ExperimentConfig cfg;
  if (!args.config_path.empty())
    cfg = mcnmf::ExperimentConfig::from_json(
        mcnmf::detail::read_json_file(args.config_path));
  if (args.seed_given) cfg.seed = args.seed;
  if (args.full_scale) {
    cfg.eval.n_training_sets = 20;
    cfg.eval.n_test_mixtures = 50;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multichannel NMF separation + speaker recognition pipeline"};
  app.require_subcommand(1);

  CommonArgs sim_args, train_args, test_args, sweep_args;
  std::string sim_out, train_corpus, train_out, test_model, test_corpus,
      test_out, eval_corpus, eval_results, eval_out, sweep_param, sweep_out;
  std::vector<int> sweep_values;
  int test_jobs = 1;
  bool test_no_sequential = false;

  CLI::App *sim = app.add_subcommand(
      "simulate", "Synthesize the corpus (training + test scenes) to disk");
  add_common(sim, &sim_args);
  sim->add_option("--out", sim_out, "Corpus output directory")->required();

  CLI::App *train = app.add_subcommand(
      "train", "Learn one speaker library per stored training scene");
  add_common(train, &train_args);
  train->add_option("--corpus", train_corpus, "Corpus directory")->required();
  train->add_option("--out", train_out, "Model output directory")->required();

  CLI::App *test = app.add_subcommand(
      "test", "Joint separation + identification on stored test scenes");
  add_common(test, &test_args);
  test->add_option("--model", test_model, "Model directory")->required();
  test->add_option("--corpus", test_corpus, "Corpus directory")->required();
  test->add_option("--out", test_out, "Results output directory")->required();
  test->add_option("--jobs", test_jobs,
                   "Worker threads across independent scenes")
      ->check(CLI::PositiveNumber);
  test->add_flag("--no-sequential", test_no_sequential,
                 "Skip the sequential separate-then-identify baseline");

  CLI::App *evaluate = app.add_subcommand(
      "evaluate", "Score stored results against stored ground truth");
  evaluate->add_option("--corpus", eval_corpus, "Corpus directory")
      ->required();
  evaluate->add_option("--results", eval_results, "Results directory")
      ->required();
  evaluate->add_option("--out", eval_out, "Metrics CSV path")->required();

  CLI::App *sweep = app.add_subcommand(
      "sweep", "Re-run the in-memory pipeline across one parameter's values");
  add_common(sweep, &sweep_args);
  sweep->add_option("--parameter", sweep_param, "Swept parameter: k or utr")
      ->required();
  sweep->add_option("--values", sweep_values, "Values to sweep")
      ->required()
      ->delimiter(',');
  sweep->add_option("--out", sweep_out, "Sweep CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) {
      mcnmf::SimulateReport report =
          cmd_simulate(resolve_config(sim_args), sim_out, &std::cerr);
      std::cout << "wrote " << report.training_scenes
                << " training scene(s) and " << report.test_scenes
                << " test scene(s) under " << sim_out << "\n";
    } else if (train->parsed()) {
      mcnmf::TrainReport report = cmd_train(resolve_config(train_args),
                                            train_corpus, train_out,
                                            &std::cerr);
      std::cout << "trained " << report.sets << " set(s) under " << train_out
                << "\n";
    } else if (test->parsed()) {
      mcnmf::TestReport report =
          cmd_test(resolve_config(test_args), test_model, test_corpus,
                   test_out, !test_no_sequential, &std::cerr, test_jobs);
      std::cout << "tested " << report.trials_total << " trial(s), "
                << report.trials_excluded
                << " excluded by source counting; results under " << test_out
                << "\n";
    } else if (evaluate->parsed()) {
      mcnmf::EvaluateReport report =
          cmd_evaluate(eval_corpus, eval_results, eval_out, &std::cerr);
      const mcnmf::ExperimentSummary &s = report.summary;
      std::cout << "scored " << (s.scenes_total - s.scenes_excluded) << "/"
                << s.scenes_total << " trial(s)\n"
                << "joint accuracy " << s.joint.accuracy << " (SER "
                << s.joint.speaker_error_rate << ")\n";
      if (s.has_sequential)
        std::cout << "sequential accuracy " << s.sequential.accuracy << "\n";
      if (s.has_separation)
        std::cout << "mean SDR " << s.mean_sdr << " dB (mixture baseline "
                  << s.mean_mixture_sdr << " dB), SIR " << s.mean_sir
                  << " dB, SAR " << s.mean_sar << " dB\n";
      std::cout << "metrics: " << report.csv_path.string() << "\n";
    } else if (sweep->parsed()) {
      mcnmf::SweepReport report =
          cmd_sweep(resolve_config(sweep_args), sweep_param, sweep_values,
                    sweep_out, &std::cerr);
      for (const mcnmf::SweepPoint &p : report.points) {
        std::cout << report.parameter << "=" << p.value << ": ";
        if (p.ok)
          std::cout << "accuracy " << p.summary.joint.accuracy << "\n";
        else
          std::cout << "failed (" << p.error << ")\n";
      }
      std::cout << "table: " << sweep_out << "\n";
    }
  } catch (const mcnmf::NumericError &e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const mcnmf::Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
