#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "oodtk/benchmark.hpp"
#include "oodtk/evaluation.hpp"
#include "oodtk/experiment.hpp"
#include "oodtk/groups.hpp"
#include "oodtk/version.hpp"

namespace oodtk {

/// The experiment's data after group construction: carved pool, splits,
/// fitted encoding and encoded matrices for every cohort.
struct PreparedData {
  Dataset pool;  // modeling features only (label column projected away)
  std::vector<std::string> labels;  // per pool row, when a label column is set
  Dataset train_raw, val_raw, test_raw;
  std::shared_ptr<const Encoding> enc;
  EncodedMatrix train, val, test;
  std::vector<OODGroup> groups;
  std::vector<std::pair<std::string, EncodedMatrix>> group_mats;
  DatasetStats stats;
  std::vector<std::string> warnings;
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write '" + path.string() + "'");
  out << content;
}

}  // namespace detail

/// Loads or generates the dataset, carves predicate groups out of the pool,
/// splits, applies withholdings to the training partition, fits the encoding
/// on the final training set and encodes every cohort.
inline PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData prep;

  Dataset full = [&]() -> Dataset {
    if (config.uses_synthetic()) {
      auto [in_dist, shifted] = generate_synthetic(*config.synthetic);
      if (config.auto_shift_group()) {
        prep.groups.push_back(OODGroup{config.synthetic_name + "_shifted",
                                       OODGroup::Provenance::Predicate,
                                       "synthetic shifted companion", std::move(shifted)});
      }
      return in_dist;
    }
    return load_dataset(config.data_csv, config.schema_json);
  }();

  // the label column is kept aside for per-class reporting, never modeled
  if (!config.label_column.empty()) {
    const int lf = full.schema().index_of(config.label_column);
    detail::require(lf >= 0, "config: label column '" + config.label_column + "' not in schema");
    detail::require(!full.schema().at(static_cast<std::size_t>(lf)).is_continuous(),
                    "config: label column '" + config.label_column + "' must be categorical");
    detail::require(full.schema().at(static_cast<std::size_t>(lf)).levels.size() == 2,
                    "config: label column '" + config.label_column + "' must be binary");
    for (std::size_t r = 0; r < full.n_rows(); ++r) {
      prep.labels.push_back(full.categorical_level(r, static_cast<std::size_t>(lf)));
    }
    std::vector<std::size_t> keep;
    for (std::size_t f = 0; f < full.schema().size(); ++f) {
      if (static_cast<int>(f) != lf) keep.push_back(f);
    }
    full = full.project(keep);
    for (auto& g : prep.groups) g.data = g.data.project(keep);
  }
  prep.pool = full;

  // predicate groups come out of the pool entirely: their rows are ineligible
  std::set<std::string> excluded_ids;
  for (const auto& g : config.groups) {
    if (g.withhold) continue;
    Predicate pred = Predicate::compile(g.predicate, prep.pool.schema());
    OODGroup group = build_ood_group(prep.pool, pred, g.name);
    for (const auto& id : group.data.row_ids()) excluded_ids.insert(id);
    prep.groups.push_back(std::move(group));
  }
  std::vector<std::size_t> eligible;
  for (std::size_t r = 0; r < prep.pool.n_rows(); ++r) {
    if (!excluded_ids.count(prep.pool.row_ids()[r])) eligible.push_back(r);
  }
  Dataset in_dist = prep.pool.subset(eligible);

  Split s = split(in_dist, config.split);
  prep.val_raw = s.val;
  prep.test_raw = s.test;
  Dataset train = s.train;
  for (const auto& g : config.groups) {
    if (!g.withhold) continue;
    Predicate pred = Predicate::compile(g.predicate, train.schema());
    auto [reduced, group] = withhold_group(train, pred, g.name);
    train = std::move(reduced);
    prep.groups.push_back(std::move(group));
  }
  prep.train_raw = std::move(train);

  prep.enc = std::make_shared<const Encoding>(fit_encoding(prep.train_raw));
  prep.train = encode(prep.train_raw, prep.enc);
  prep.val = encode(prep.val_raw, prep.enc);
  prep.test = encode(prep.test_raw, prep.enc);
  for (const auto& g : prep.groups) {
    prep.group_mats.emplace_back(g.name, encode(g.data, prep.enc));
  }

  prep.stats.n_rows = prep.pool.n_rows();
  prep.stats.n_train = prep.train_raw.n_rows();
  prep.stats.encoded_dim = prep.enc->dim();
  prep.stats.n_features = prep.pool.schema().size();
  prep.stats.n_categorical = prep.pool.schema().n_categorical();
  if (!prep.labels.empty()) {
    std::map<std::string, std::size_t> counts;
    for (const auto& l : prep.labels) ++counts[l];
    std::size_t minority = prep.labels.size();
    for (const auto& [level, count] : counts) minority = std::min(minority, count);
    prep.stats.minority_fraction =
        static_cast<double>(minority) / static_cast<double>(prep.labels.size());
  }
  prep.warnings = validate_advisories(config, prep.pool.schema(), prep.stats);
  return prep;
}

namespace detail {

inline nlohmann::json dataset_section(const PreparedData& prep) {
  nlohmann::json j;
  j["n_rows"] = prep.pool.n_rows();
  j["n_features"] = prep.pool.schema().size();
  j["n_continuous"] = prep.pool.schema().n_continuous();
  j["n_categorical"] = prep.pool.schema().n_categorical();
  j["encoded_dim"] = prep.enc->dim();
  j["content_hash"] = prep.pool.content_hash();
  j["split_sizes"] = {{"train", prep.train_raw.n_rows()},
                      {"val", prep.val_raw.n_rows()},
                      {"test", prep.test_raw.n_rows()}};
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : prep.groups) {
    groups.push_back({{"name", g.name}, {"n_rows", g.data.n_rows()},
                      {"provenance", g.provenance_label()}});
  }
  j["groups"] = std::move(groups);
  return j;
}

inline nlohmann::json grid_section(const EvaluationGrid& grid) {
  nlohmann::json j;
  j["estimators"] = grid.estimator_names;
  j["groups"] = grid.group_names;
  j["trial_seeds"] = grid.trial_seeds;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& row : grid.cells) {
    for (const auto& cell : row) {
      nlohmann::json cj;
      cj["estimator"] = cell.estimator;
      cj["group"] = cell.group;
      cj["aucs"] = cell.trial_aucs;
      if (cell.n_trials() > 0) {
        cj["mean"] = cell.mean();
        cj["std"] = cell.stddev();
      } else {
        cj["mean"] = nullptr;
        cj["std"] = nullptr;
      }
      cj["n_trials"] = cell.n_trials();
      cj["errors"] = cell.errors;
      cells.push_back(std::move(cj));
    }
  }
  j["cells"] = std::move(cells);
  return j;
}

inline nlohmann::json distribution_json(const ScoreDistribution& d) {
  nlohmann::json j;
  j["estimator"] = d.estimator;
  j["cohort"] = d.cohort;
  j["clip_lo"] = d.clip_lo;
  j["clip_hi"] = d.clip_hi;
  j["bin_edges"] = d.bin_edges;
  j["counts"] = d.counts;
  return j;
}

inline std::string auc_csv(const EvaluationGrid& grid) {
  std::string out = "estimator,group,trial,auc\n";
  for (const auto& row : grid.cells) {
    for (const auto& cell : row) {
      for (std::size_t t = 0; t < cell.trial_aucs.size(); ++t) {
        out += cell.estimator + "," + cell.group + "," + std::to_string(cell.trial_ids[t]) + "," +
               format_double(cell.trial_aucs[t]) + "\n";
      }
    }
  }
  return out;
}

inline std::string distributions_csv(const std::vector<ScoreDistribution>& dists) {
  std::string out = "estimator,cohort,bin_left,bin_right,count\n";
  for (const auto& d : dists) {
    for (std::size_t b = 0; b < d.counts.size(); ++b) {
      out += d.estimator + "," + d.cohort + "," + format_double(d.bin_edges[b]) + "," +
             format_double(d.bin_edges[b + 1]) + "," + std::to_string(d.counts[b]) + "\n";
    }
  }
  return out;
}

inline std::string rank_csv(const std::vector<SplitFeatureResult>& results) {
  std::string out = "estimator,split_feature,split_rank,feature,position,mean_abs_phi\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.importance.size(); ++i) {
      out += r.estimator + "," + r.split_feature + "," + std::to_string(r.rank) + "," +
             r.importance[i].first + "," + std::to_string(i + 1) + "," +
             format_double(r.importance[i].second) + "\n";
    }
  }
  return out;
}

}  // namespace detail

struct EvaluateResult {
  nlohmann::json report;
  bool any_cell_failed = false;
};

/// The full evaluation protocol: n_trials refits per estimator, AUC grid,
/// clipped score distributions, and (when configured) the two
/// interpretability tests. Writes nothing; see write_evaluate_outputs.
inline EvaluateResult run_evaluate(const ExperimentConfig& config) {
  config.validate_for_evaluate();
  PreparedData prep = prepare_data(config);
  detail::require(!prep.group_mats.empty(), "evaluate: no OOD groups after preparation");

  EvaluationGrid grid = run_trials(config.estimators, prep.train, prep.val, prep.test,
                                   prep.group_mats, config.n_trials, config.seed, config.jobs);

  // distributions and explanations reuse the first trial's models
  std::vector<ScoreDistribution> dists;
  nlohmann::json explanations = nlohmann::json::array();
  std::vector<SplitFeatureResult> rank_results;
  const bool per_class = [&] {
    for (const auto& w : prep.warnings) {
      if (w.find("minority-class") != std::string::npos) return true;
    }
    return false;
  }();

  for (std::size_t e = 0; e < config.estimators.size(); ++e) {
    const auto& model = grid.first_trial_models[e];
    if (!model) continue;
    const Eigen::VectorXd test_scores = model->score(prep.test);
    std::vector<std::pair<std::string, Eigen::VectorXd>> cohorts;
    for (const auto& [name, mat] : prep.group_mats) {
      cohorts.emplace_back(name, model->score(mat));
    }
    if (per_class) {
      // test rows split by label level
      std::map<std::string, std::string> label_of;
      for (std::size_t pr = 0; pr < prep.pool.n_rows(); ++pr) {
        label_of[prep.pool.row_ids()[pr]] = prep.labels[pr];
      }
      std::map<std::string, std::vector<double>> by_class;
      for (std::size_t r = 0; r < prep.test_raw.n_rows(); ++r) {
        by_class[label_of[prep.test_raw.row_ids()[r]]].push_back(
            test_scores(static_cast<Eigen::Index>(r)));
      }
      for (const auto& [level, scores] : by_class) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(scores.size()));
        for (std::size_t i = 0; i < scores.size(); ++i) v(static_cast<Eigen::Index>(i)) = scores[i];
        cohorts.emplace_back("test:class=" + level, v);
      }
    }
    for (auto& d : score_distribution(config.estimators[e].name, test_scores, cohorts,
                                      config.bins)) {
      dists.push_back(std::move(d));
    }

    if (config.top_n_outliers > 0) {
      AttributionSettings settings = config.attribution;
      settings.seed = mix_seed(config.seed, 0xE1 + e);
      auto ex = explain_outliers(*model, prep.test, prep.train,
                                 std::min<std::size_t>(static_cast<std::size_t>(config.top_n_outliers),
                                                       prep.test.n_rows()),
                                 static_cast<std::size_t>(config.top_k_features), settings);
      nlohmann::json ej;
      ej["estimator"] = config.estimators[e].name;
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& o : ex) rows.push_back(o.to_json());
      ej["outliers"] = std::move(rows);
      explanations.push_back(std::move(ej));
    }
  }

  if (!config.split_feature.empty()) {
    detail::require(!config.split_predicate.empty(),
                    "config: split_feature needs a split_predicate");
    detail::require(prep.pool.schema().index_of(config.split_feature) >= 0,
                    "config: split feature '" + config.split_feature + "' not in schema");
    Predicate pred = Predicate::compile(config.split_predicate, prep.pool.schema());
    for (const auto& est_config : config.estimators) {
      AttributionSettings settings = config.attribution;
      settings.seed = mix_seed(config.seed, 0xE9);
      rank_results.push_back(
          split_feature_rank(prep.pool, config.split_feature, pred, est_config, settings));
    }
  }

  EvaluateResult result;
  result.any_cell_failed = grid.any_failure();
  nlohmann::json& report = result.report;
  report["version"] = kVersion;
  report["config"] = config.to_json();
  report["seeds"] = {{"base", config.seed}, {"trial_seeds", grid.trial_seeds}};
  report["dataset"] = detail::dataset_section(prep);
  report["warnings"] = prep.warnings;
  report["grid"] = detail::grid_section(grid);
  nlohmann::json dj = nlohmann::json::array();
  for (const auto& d : dists) dj.push_back(detail::distribution_json(d));
  report["distributions"] = std::move(dj);
  nlohmann::json interp;
  interp["outlier_explanations"] = std::move(explanations);
  nlohmann::json rj = nlohmann::json::array();
  for (const auto& r : rank_results) {
    nlohmann::json one;
    one["estimator"] = r.estimator;
    one["split_feature"] = r.split_feature;
    one["rank"] = r.rank;
    nlohmann::json imp = nlohmann::json::array();
    for (const auto& [name, value] : r.importance) {
      imp.push_back({{"feature", name}, {"mean_abs_phi", value}});
    }
    one["importance"] = std::move(imp);
    rj.push_back(std::move(one));
  }
  interp["split_feature_rank"] = std::move(rj);
  report["interpretability"] = std::move(interp);
  report["timing"] = nlohmann::json::array();

  // stash the sidecar payloads for the writer
  result.report["_sidecars"] = {{"auc_csv", detail::auc_csv(grid)},
                                {"distributions_csv", detail::distributions_csv(dists)},
                                {"rank_csv", detail::rank_csv(rank_results)}};
  return result;
}

/// Writes report.json plus the CSV sidecars into out_dir.
inline void write_evaluate_outputs(EvaluateResult result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const nlohmann::json sidecars = result.report.at("_sidecars");
  result.report.erase("_sidecars");
  detail::write_file(fs::path(out_dir) / "report.json", result.report.dump(2) + "\n");
  detail::write_file(fs::path(out_dir) / "auc.csv", sidecars.at("auc_csv").get<std::string>());
  detail::write_file(fs::path(out_dir) / "distributions.csv",
                     sidecars.at("distributions_csv").get<std::string>());
  const std::string rank = sidecars.at("rank_csv").get<std::string>();
  if (rank.find('\n') != rank.size() - 1) {
    detail::write_file(fs::path(out_dir) / "split_feature_rank.csv", rank);
  }
}

/// Writes <name>.csv, <name>.schema.json and the shifted companion
/// <name>_shifted.csv for a synthetic config.
inline std::vector<std::string> run_synth(const ExperimentConfig& config,
                                          const std::string& out_dir) {
  detail::require(config.uses_synthetic(), "synth: config has no synthetic block");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto [in_dist, shifted] = generate_synthetic(*config.synthetic);
  const std::string base = (fs::path(out_dir) / config.synthetic_name).string();
  in_dist.save_csv(base + ".csv");
  in_dist.schema().save(base + ".schema.json");
  shifted.save_csv(base + "_shifted.csv");
  return {base + ".csv", base + ".schema.json", base + "_shifted.csv"};
}

/// Fits every configured estimator on the prepared training split and saves
/// one self-contained blob per estimator.
inline std::vector<std::string> run_fit(const ExperimentConfig& config,
                                        const std::string& out_dir) {
  detail::require(!config.estimators.empty(), "fit: no estimators configured");
  PreparedData prep = prepare_data(config);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (EstimatorConfig est_config : config.estimators) {
    est_config.seed = config.seed;
    auto model = fit_estimator(est_config, prep.train, prep.val);
    const std::string path = (fs::path(out_dir) / (est_config.name + ".est.json")).string();
    detail::write_file(path, model->to_json().dump() + "\n");
    paths.push_back(path);
  }
  return paths;
}

/// Scores a CSV with a previously fitted estimator blob. The blob carries its
/// own schema and encoding; the CSV must conform.
inline std::string run_score(const std::string& model_path, const std::string& csv_path,
                             const std::string& out_dir) {
  std::ifstream in(model_path);
  detail::require(in.good(), "score: cannot open model '" + model_path + "'");
  nlohmann::json mj;
  try {
    in >> mj;
  } catch (const nlohmann::json::exception& e) {
    throw Error("score: invalid model file: " + std::string(e.what()));
  }
  auto model = load_estimator(mj);
  detail::require(model->encoding() != nullptr, "score: model blob has no encoding");
  Dataset data = load_dataset(csv_path, model->encoding()->schema());
  EncodedMatrix X = encode(data, model->encoding());
  const Eigen::VectorXd scores = model->score(X);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::string csv = "row_id,score\n";
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    csv += csv::quote_field(data.row_ids()[static_cast<std::size_t>(i)]) + "," +
           format_double(scores(i)) + "\n";
  }
  const std::string path = (fs::path(out_dir) / "scores.csv").string();
  detail::write_file(path, csv);
  return path;
}

/// The interpretability subcommand: split-feature ranks and/or outlier
/// explanations, fitted inline.
inline nlohmann::json run_explain(const ExperimentConfig& config, const std::string& out_dir) {
  detail::require(!config.estimators.empty(), "explain: no estimators configured");
  detail::require(config.top_n_outliers > 0 || !config.split_feature.empty(),
                  "explain: configure top_n_outliers and/or split_feature");
  PreparedData prep = prepare_data(config);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  nlohmann::json out;
  out["version"] = kVersion;
  out["config"] = config.to_json();

  nlohmann::json explanations = nlohmann::json::array();
  std::vector<SplitFeatureResult> rank_results;
  for (std::size_t e = 0; e < config.estimators.size(); ++e) {
    EstimatorConfig est_config = config.estimators[e];
    est_config.seed = config.seed;
    if (config.top_n_outliers > 0) {
      auto model = fit_estimator(est_config, prep.train, prep.val);
      AttributionSettings settings = config.attribution;
      settings.seed = mix_seed(config.seed, 0xE1 + e);
      auto ex = explain_outliers(*model, prep.test, prep.train,
                                 std::min<std::size_t>(static_cast<std::size_t>(config.top_n_outliers),
                                                       prep.test.n_rows()),
                                 static_cast<std::size_t>(config.top_k_features), settings);
      nlohmann::json ej;
      ej["estimator"] = est_config.name;
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& o : ex) rows.push_back(o.to_json());
      ej["outliers"] = std::move(rows);
      explanations.push_back(std::move(ej));
    }
    if (!config.split_feature.empty()) {
      detail::require(!config.split_predicate.empty(),
                      "config: split_feature needs a split_predicate");
      Predicate pred = Predicate::compile(config.split_predicate, prep.pool.schema());
      AttributionSettings settings = config.attribution;
      settings.seed = mix_seed(config.seed, 0xE9);
      rank_results.push_back(
          split_feature_rank(prep.pool, config.split_feature, pred, est_config, settings));
    }
  }
  out["outlier_explanations"] = std::move(explanations);
  nlohmann::json rj = nlohmann::json::array();
  for (const auto& r : rank_results) {
    rj.push_back({{"estimator", r.estimator}, {"split_feature", r.split_feature},
                  {"rank", r.rank}});
  }
  out["split_feature_rank"] = std::move(rj);

  detail::write_file(fs::path(out_dir) / "explain.json", out.dump(2) + "\n");
  if (!rank_results.empty()) {
    detail::write_file(fs::path(out_dir) / "split_feature_rank.csv", detail::rank_csv(rank_results));
  }
  return out;
}

/// Fits each estimator once and times single-sample inference and SHAP.
inline std::vector<TimingRow> run_bench(const ExperimentConfig& config,
                                        const std::string& out_dir) {
  detail::require(!config.estimators.empty(), "bench: no estimators configured");
  PreparedData prep = prepare_data(config);
  detail::require(prep.test.n_rows() > 0, "bench: empty test split");
  const Eigen::RowVectorXd sample = prep.test.values.row(0);

  std::vector<TimingRow> rows;
  for (EstimatorConfig est_config : config.estimators) {
    est_config.seed = config.seed;
    auto model = fit_estimator(est_config, prep.train, prep.val);
    AttributionSettings settings = config.attribution;
    settings.seed = mix_seed(config.seed, 0xB0);
    rows.push_back(bench_estimator(*model, sample, prep.train, config.bench_n_inference,
                                   config.bench_n_shap, settings));
  }

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  detail::write_file(fs::path(out_dir) / "timing.csv", timing_csv(rows));
  nlohmann::json out;
  out["version"] = kVersion;
  out["config"] = config.to_json();
  nlohmann::json tj = nlohmann::json::array();
  for (const auto& r : rows) {
    tj.push_back({{"estimator", r.estimator}, {"metric", r.metric},
                  {"inference_mean_s", r.inference_mean_s}, {"inference_std_s", r.inference_std_s},
                  {"shap_mean_s", r.shap_mean_s}, {"shap_std_s", r.shap_std_s},
                  {"n_inference", r.n_inference}, {"n_shap", r.n_shap}});
  }
  out["timing"] = std::move(tj);
  detail::write_file(fs::path(out_dir) / "bench.json", out.dump(2) + "\n");
  return rows;
}

}  // namespace oodtk
