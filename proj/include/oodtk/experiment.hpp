#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodtk/attribution.hpp"
#include "oodtk/estimators/estimator.hpp"
#include "oodtk/split.hpp"
#include "oodtk/synthetic.hpp"

namespace oodtk {

inline nlohmann::json synthetic_to_json(const SyntheticSpec& s) {
  nlohmann::json j;
  j["n_rows"] = s.n_rows;
  j["n_continuous"] = s.n_continuous;
  j["categorical_levels"] = s.categorical_levels;
  j["latent_rank"] = s.latent_rank;
  j["shift"] = s.shift;
  j["flip_prob"] = s.flip_prob;
  j["seed"] = s.seed;
  return j;
}

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.n_rows = j.value("n_rows", s.n_rows);
  s.n_continuous = j.value("n_continuous", s.n_continuous);
  if (j.contains("categorical_levels")) {
    s.categorical_levels = j.at("categorical_levels").get<std::vector<int>>();
  }
  s.latent_rank = j.value("latent_rank", s.latent_rank);
  if (j.contains("shift")) s.shift = j.at("shift").get<std::vector<double>>();
  else s.shift.assign(s.n_continuous, 0.0);
  s.flip_prob = j.value("flip_prob", s.flip_prob);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

/// An OOD cohort definition: rows matching the predicate are carved out of the
/// pool before splitting, or withheld from the training partition.
struct GroupSpec {
  std::string name;
  std::string predicate;
  bool withhold = false;
};

/// Everything one experiment needs: data source, split, detectors, OOD
/// groups, trial count and the interpretability / benchmark knobs.
struct ExperimentConfig {
  // data source: either file paths or a synthetic recipe
  std::string data_csv;
  std::string schema_json;
  std::optional<SyntheticSpec> synthetic;
  std::string synthetic_name = "synthetic";

  SplitSpec split{0.7, 0.15, 0.15, 0};
  std::vector<EstimatorConfig> estimators;
  std::vector<GroupSpec> groups;
  int n_trials = 5;
  int bins = 30;
  std::string label_column;

  // interpretability
  AttributionSettings attribution;
  int top_n_outliers = 0;
  int top_k_features = 3;
  std::string split_feature;
  std::string split_predicate;

  // benchmark
  int bench_n_inference = 1000;
  int bench_n_shap = 5;

  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int jobs = 1;

  bool uses_synthetic() const { return synthetic.has_value(); }

  void validate_for_evaluate() const {
    validate_common();
    detail::require(!estimators.empty(), "config: evaluate needs at least one estimator");
    detail::require(!groups.empty() || auto_shift_group(),
                    "config: evaluate needs at least one OOD group");
    detail::require(n_trials >= 1, "config: n_trials must be >= 1");
    detail::require(bins >= 1, "config: bins must be >= 1");
  }

  void validate_common() const {
    const bool files = !data_csv.empty() || !schema_json.empty();
    detail::require(files != uses_synthetic(),
                    "config: specify either dataset files or a synthetic block, not both");
    if (files) {
      detail::require(!data_csv.empty() && !schema_json.empty(),
                      "config: dataset needs both 'csv' and 'schema' paths");
    }
    std::set<std::string> names;
    for (const auto& e : estimators) {
      e.validate();
      detail::require(names.insert(e.name).second,
                      "config: duplicate estimator name '" + e.name + "' (set distinct names)");
    }
    std::set<std::string> group_names;
    for (const auto& g : groups) {
      detail::require(!g.name.empty(), "config: group without a name");
      detail::require(!g.predicate.empty(), "config: group '" + g.name + "' without a predicate");
      detail::require(group_names.insert(g.name).second,
                      "config: duplicate group name '" + g.name + "'");
    }
    detail::require(jobs >= 1, "config: jobs must be >= 1");
  }

  /// Synthetic runs with a planted shift evaluate against the shifted
  /// companion as an implicit group.
  bool auto_shift_group() const {
    if (!uses_synthetic()) return false;
    for (double s : synthetic->shift) {
      if (s != 0.0) return true;
    }
    return synthetic->flip_prob > 0.0;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    if (uses_synthetic()) {
      j["synthetic"] = synthetic_to_json(*synthetic);
      j["synthetic_name"] = synthetic_name;
    } else {
      j["dataset"] = {{"csv", data_csv}, {"schema", schema_json}};
    }
    j["split"] = {{"train", split.train}, {"val", split.val}, {"test", split.test},
                  {"seed", split.seed}};
    nlohmann::json ests = nlohmann::json::array();
    for (const auto& e : estimators) ests.push_back(e.to_json());
    j["estimators"] = std::move(ests);
    nlohmann::json gs = nlohmann::json::array();
    for (const auto& g : groups) {
      gs.push_back({{"name", g.name}, {"predicate", g.predicate}, {"withhold", g.withhold}});
    }
    j["groups"] = std::move(gs);
    j["n_trials"] = n_trials;
    j["bins"] = bins;
    if (!label_column.empty()) j["label_column"] = label_column;
    nlohmann::json att;
    att["n_coalitions"] = attribution.n_coalitions;
    att["background_rows"] = attribution.background_cap;
    att["max_rows"] = attribution.max_rows;
    att["top_n_outliers"] = top_n_outliers;
    att["top_k_features"] = top_k_features;
    if (!split_feature.empty()) {
      att["split_feature"] = split_feature;
      att["split_predicate"] = split_predicate;
    }
    j["attribution"] = std::move(att);
    j["bench"] = {{"n_inference", bench_n_inference}, {"n_shap", bench_n_shap}};
    j["out_dir"] = out_dir;
    j["seed"] = seed;
    j["jobs"] = jobs;
    return j;
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("synthetic")) {
      c.synthetic = synthetic_from_json(j.at("synthetic"));
      c.synthetic_name = j.value("synthetic_name", c.synthetic_name);
    }
    if (j.contains("dataset")) {
      c.data_csv = j.at("dataset").value("csv", "");
      c.schema_json = j.at("dataset").value("schema", "");
    }
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.train = s.value("train", 0.7);
      c.split.val = s.value("val", 0.15);
      c.split.test = s.value("test", 0.15);
      c.split.seed = s.value("seed", c.seed);
    } else {
      c.split.seed = c.seed;
    }
    if (j.contains("estimators")) {
      for (const auto& ej : j.at("estimators")) {
        c.estimators.push_back(EstimatorConfig::from_json(ej));
      }
    }
    if (j.contains("groups")) {
      for (const auto& gj : j.at("groups")) {
        GroupSpec g;
        g.name = gj.at("name").get<std::string>();
        g.predicate = gj.at("predicate").get<std::string>();
        g.withhold = gj.value("withhold", false);
        c.groups.push_back(std::move(g));
      }
    }
    c.n_trials = j.value("n_trials", 5);
    c.bins = j.value("bins", 30);
    c.label_column = j.value("label_column", "");
    if (j.contains("attribution")) {
      const auto& a = j.at("attribution");
      c.attribution.n_coalitions = a.value("n_coalitions", 0);
      c.attribution.background_cap = a.value("background_rows", 100);
      c.attribution.max_rows = a.value("max_rows", 100);
      c.top_n_outliers = a.value("top_n_outliers", 0);
      c.top_k_features = a.value("top_k_features", 3);
      c.split_feature = a.value("split_feature", "");
      c.split_predicate = a.value("split_predicate", "");
    }
    if (j.contains("bench")) {
      c.bench_n_inference = j.at("bench").value("n_inference", 1000);
      c.bench_n_shap = j.at("bench").value("n_shap", 5);
    }
    c.out_dir = j.value("out_dir", "out");
    c.jobs = j.value("jobs", 1);
    c.attribution.seed = c.seed;
    c.validate_common();
    return c;
  }
};

struct DatasetStats {
  std::size_t n_rows = 0;
  std::size_t n_train = 0;
  std::size_t encoded_dim = 0;
  std::size_t n_features = 0;
  std::size_t n_categorical = 0;
  double minority_fraction = -1;  // < 0: no label column configured
};

/// Non-fatal configuration advisories: dataset shapes and estimator choices
/// that are known to interact badly get a written warning in the report.
inline std::vector<std::string> validate_advisories(const ExperimentConfig& config,
                                                    const FeatureSchema& schema,
                                                    const DatasetStats& stats) {
  std::vector<std::string> warnings;
  if (stats.n_features > 0 && 2 * stats.n_categorical > stats.n_features) {
    warnings.push_back(
        "more than half of the features are categorical (" + std::to_string(stats.n_categorical) +
        " of " + std::to_string(stats.n_features) +
        "); continuous-likelihood detectors can struggle on predominantly categorical data");
  }
  if (stats.encoded_dim > 50) {
    std::string flagged;
    for (const auto& e : config.estimators) {
      if (e.kind == "lof" || e.kind == "maf") {
        if (!flagged.empty()) flagged += ", ";
        flagged += e.name;
      }
    }
    if (!flagged.empty()) {
      warnings.push_back("encoded dimension is " + std::to_string(stats.encoded_dim) +
                         " (> 50); " + flagged +
                         " perform no dimensionality reduction and can degrade on"
                         " high-dimensional inputs");
    }
  }
  for (const auto& e : config.estimators) {
    if (e.kind == "lof" && stats.n_train > 100000) {
      warnings.push_back(e.name + ": neighbor search over " + std::to_string(stats.n_train) +
                         " training rows is slow and memory-hungry at scoring time");
    }
  }
  if (!config.label_column.empty() && stats.minority_fraction >= 0 &&
      stats.minority_fraction < 0.10) {
    warnings.push_back("label column '" + config.label_column +
                       "' has a minority-class fraction of " +
                       format_double(stats.minority_fraction) +
                       " (< 10%); novelty scores of the minority class should be monitored"
                       " (per-class score distributions added to the report)");
  }
  (void)schema;
  return warnings;
}

}  // namespace oodtk
