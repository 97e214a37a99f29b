#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodtk/common.hpp"

namespace oodtk {

enum class FeatureKind { Continuous, Categorical };

struct Feature {
  std::string name;
  FeatureKind kind = FeatureKind::Continuous;
  std::vector<std::string> levels;  // declared order matters for one-hot layout

  bool is_continuous() const { return kind == FeatureKind::Continuous; }

  int level_index(const std::string& level) const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i] == level) return static_cast<int>(i);
    }
    return -1;
  }
};

/// Ordered feature list; the contract between ingestion, encoding and
/// attribution. Validated on construction.
class FeatureSchema {
 public:
  FeatureSchema() = default;

  explicit FeatureSchema(std::vector<Feature> features)
      : features_(std::move(features)) {
    validate();
  }

  const std::vector<Feature>& features() const { return features_; }
  std::size_t size() const { return features_.size(); }
  const Feature& at(std::size_t i) const { return features_[i]; }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < features_.size(); ++i) {
      if (features_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  std::size_t n_continuous() const {
    std::size_t n = 0;
    for (const auto& f : features_) n += f.is_continuous() ? 1 : 0;
    return n;
  }

  std::size_t n_categorical() const { return size() - n_continuous(); }

  bool operator==(const FeatureSchema& other) const {
    if (features_.size() != other.features_.size()) return false;
    for (std::size_t i = 0; i < features_.size(); ++i) {
      const auto& a = features_[i];
      const auto& b = other.features_[i];
      if (a.name != b.name || a.kind != b.kind || a.levels != b.levels) {
        return false;
      }
    }
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : features_) {
      nlohmann::json j;
      j["name"] = f.name;
      if (f.is_continuous()) {
        j["kind"] = "continuous";
      } else {
        j["kind"] = "categorical";
        j["levels"] = f.levels;
      }
      feats.push_back(std::move(j));
    }
    return nlohmann::json{{"features", std::move(feats)}};
  }

  static FeatureSchema from_json(const nlohmann::json& j) {
    detail::require(j.is_object() && j.contains("features") && j["features"].is_array(),
                    "schema: expected an object with a 'features' array");
    std::vector<Feature> feats;
    for (const auto& fj : j["features"]) {
      detail::require(fj.is_object() && fj.contains("name") && fj.contains("kind"),
                      "schema: each feature needs 'name' and 'kind'");
      Feature f;
      f.name = fj["name"].get<std::string>();
      const std::string kind = fj["kind"].get<std::string>();
      if (kind == "continuous") {
        f.kind = FeatureKind::Continuous;
        detail::require(!fj.contains("levels"),
                        "schema: continuous feature '" + f.name + "' must not declare levels");
      } else if (kind == "categorical") {
        f.kind = FeatureKind::Categorical;
        detail::require(fj.contains("levels") && fj["levels"].is_array(),
                        "schema: categorical feature '" + f.name + "' needs a 'levels' array");
        for (const auto& lv : fj["levels"]) f.levels.push_back(lv.get<std::string>());
      } else {
        throw Error("schema: unknown kind '" + kind + "' for feature '" + f.name + "'");
      }
      feats.push_back(std::move(f));
    }
    return FeatureSchema(std::move(feats));
  }

  static FeatureSchema load(const std::string& path) {
    std::ifstream in(path);
    detail::require(in.good(), "schema: cannot open '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("schema: invalid JSON in '" + path + "': " + e.what());
    }
    return from_json(j);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    detail::require(out.good(), "schema: cannot write '" + path + "'");
    out << to_json().dump(2) << "\n";
  }

 private:
  void validate() const {
    detail::require(!features_.empty(), "schema: no features");
    std::set<std::string> names;
    for (const auto& f : features_) {
      detail::require(!f.name.empty(), "schema: empty feature name");
      detail::require(names.insert(f.name).second,
                      "schema: duplicate feature name '" + f.name + "'");
      if (f.kind == FeatureKind::Categorical) {
        detail::require(f.levels.size() >= 2,
                        "schema: categorical feature '" + f.name + "' needs >= 2 levels");
        std::set<std::string> lv(f.levels.begin(), f.levels.end());
        detail::require(lv.size() == f.levels.size(),
                        "schema: duplicate level in feature '" + f.name + "'");
      } else {
        detail::require(f.levels.empty(),
                        "schema: continuous feature '" + f.name + "' must not declare levels");
      }
    }
  }

  std::vector<Feature> features_;
};

}  // namespace oodtk
