// Command-line runner for the OOD-detector selection toolkit: synthetic data
// generation, estimator fitting and scoring, AUC evaluation grids,
// interpretability tests and inference benchmarks, driven by a JSON config.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "oodtk/runner.hpp"
#include "oodtk/version.hpp"

namespace {

oodtk::ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw oodtk::Error("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw oodtk::Error("invalid JSON in '" + path + "': " + e.what());
  }
  return oodtk::ExperimentConfig::from_json(j);
}

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;

  oodtk::ExperimentConfig resolve() const {
    oodtk::ExperimentConfig config = load_config(config_path);
    if (seed) {
      config.seed = *seed;
      config.split.seed = *seed;
      config.attribution.seed = *seed;
    }
    if (jobs) config.jobs = *jobs;
    if (!out_dir.empty()) config.out_dir = out_dir;
    return config;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OOD detector selection toolkit"};
  app.set_version_flag("--version", std::string(oodtk::kVersion));
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "experiment config JSON")->envname("OODTK_CONFIG");
  app.add_option("--out", args.out_dir, "output directory (overrides config)");
  app.add_option("--seed", args.seed, "base seed (overrides config)");
  app.add_option("--jobs", args.jobs, "parallel fit jobs for the evaluation grid");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset and its shifted companion");
  auto* fit = app.add_subcommand("fit", "fit the configured estimators and save them");
  auto* score = app.add_subcommand("score", "score a CSV with a saved estimator");
  auto* evaluate = app.add_subcommand("evaluate", "run the AUC evaluation grid and report");
  auto* explain = app.add_subcommand("explain", "run the interpretability tests");
  auto* bench = app.add_subcommand("bench", "time single-sample inference and SHAP");

  std::string model_path, data_csv;
  score->add_option("--model", model_path, "saved estimator blob (.est.json)")->required();
  score->add_option("--data", data_csv, "CSV to score")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (score->parsed()) {
      const std::string out = args.out_dir.empty() ? "out" : args.out_dir;
      const std::string path = oodtk::run_score(model_path, data_csv, out);
      std::cout << "wrote " << path << "\n";
      return 0;
    }

    if (args.config_path.empty()) throw oodtk::Error("--config is required");
    oodtk::ExperimentConfig config = args.resolve();
    const std::string out = config.out_dir;

    if (synth->parsed()) {
      for (const auto& f : oodtk::run_synth(config, out)) std::cout << "wrote " << f << "\n";
      return 0;
    }
    if (fit->parsed()) {
      for (const auto& f : oodtk::run_fit(config, out)) std::cout << "wrote " << f << "\n";
      return 0;
    }
    if (evaluate->parsed()) {
      oodtk::EvaluateResult result = oodtk::run_evaluate(config);
      const bool failed = result.any_cell_failed;
      oodtk::write_evaluate_outputs(std::move(result), out);
      std::cout << "wrote " << out << "/report.json\n";
      if (failed) {
        std::cerr << "some grid cells failed; see the errors in report.json\n";
        return 2;
      }
      return 0;
    }
    if (explain->parsed()) {
      oodtk::run_explain(config, out);
      std::cout << "wrote " << out << "/explain.json\n";
      return 0;
    }
    if (bench->parsed()) {
      const auto rows = oodtk::run_bench(config, out);
      std::cout << "wrote " << out << "/timing.csv (" << rows.size() << " estimators)\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
