#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "oodtk/common.hpp"
#include "oodtk/dataset.hpp"

namespace oodtk {

/// Fitted encoding statistics: per-continuous-feature standardization and the
/// one-hot column layout for categoricals. Continuous columns are standardized
/// with train-set mean and population std; one-hot columns are left at {0,1}.
class Encoding {
 public:
  struct Block {
    std::size_t start = 0;  // first encoded column of this feature
    std::size_t width = 0;  // 1 for continuous, #levels for categorical
  };

  const FeatureSchema& schema() const { return schema_; }
  std::size_t dim() const { return dim_; }
  const Block& block(std::size_t feature) const { return blocks_[feature]; }
  double mean(std::size_t feature) const { return means_[feature]; }
  double stddev(std::size_t feature) const { return stds_[feature]; }

  /// Level index encoded in a one-hot block (the position of the 1).
  int decode_categorical(const Eigen::RowVectorXd& row, std::size_t feature) const {
    const auto& b = blocks_[feature];
    int best = 0;
    double best_v = row(static_cast<Eigen::Index>(b.start));
    for (std::size_t j = 1; j < b.width; ++j) {
      const double v = row(static_cast<Eigen::Index>(b.start + j));
      if (v > best_v) {
        best_v = v;
        best = static_cast<int>(j);
      }
    }
    return best;
  }

  /// Raw (pre-standardization) value of a continuous feature from its encoded column.
  double decode_continuous(double z, std::size_t feature) const {
    return means_[feature] + z * stds_[feature];
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema"] = schema_.to_json();
    nlohmann::json stats = nlohmann::json::array();
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      if (schema_.at(f).is_continuous()) {
        stats.push_back({{"feature", schema_.at(f).name}, {"mean", means_[f]}, {"std", stds_[f]}});
      }
    }
    j["continuous_stats"] = std::move(stats);
    j["dim"] = dim_;
    return j;
  }

  static Encoding from_json(const nlohmann::json& j) {
    Encoding enc;
    enc.schema_ = FeatureSchema::from_json(j.at("schema"));
    enc.init_layout();
    for (const auto& s : j.at("continuous_stats")) {
      const int f = enc.schema_.index_of(s.at("feature").get<std::string>());
      detail::require(f >= 0, "encoding: stats for unknown feature");
      enc.means_[f] = s.at("mean").get<double>();
      enc.stds_[f] = s.at("std").get<double>();
      detail::require(enc.stds_[f] > 0, "encoding: non-positive std in serialized encoding");
    }
    detail::require(enc.dim_ == j.at("dim").get<std::size_t>(), "encoding: dim mismatch");
    return enc;
  }

  friend Encoding fit_encoding(const Dataset& train);

 private:
  void init_layout() {
    blocks_.clear();
    means_.assign(schema_.size(), 0.0);
    stds_.assign(schema_.size(), 1.0);
    std::size_t col = 0;
    for (std::size_t f = 0; f < schema_.size(); ++f) {
      const auto& feat = schema_.at(f);
      const std::size_t w = feat.is_continuous() ? 1 : feat.levels.size();
      blocks_.push_back({col, w});
      col += w;
    }
    dim_ = col;
  }

  FeatureSchema schema_;
  std::vector<Block> blocks_;
  std::vector<double> means_;  // per feature; identity entries for categoricals
  std::vector<double> stds_;
  std::size_t dim_ = 0;
};

/// Fits standardization statistics on the training set only. Constant
/// continuous features are rejected.
inline Encoding fit_encoding(const Dataset& train) {
  detail::require(train.n_rows() > 0, "fit_encoding: empty training set");
  Encoding enc;
  enc.schema_ = train.schema();
  enc.init_layout();
  const double n = static_cast<double>(train.n_rows());
  for (std::size_t f = 0; f < enc.schema_.size(); ++f) {
    if (!enc.schema_.at(f).is_continuous()) continue;
    const Eigen::VectorXd& col = train.continuous_column(f);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / n;  // population variance
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
      throw Error("fit_encoding: constant feature '" + enc.schema_.at(f).name + "'");
    }
    enc.means_[f] = mean;
    enc.stds_[f] = sd;
  }
  return enc;
}

/// A dataset pushed through an Encoding: an n x d double matrix with
/// standardized continuous columns and {0,1} one-hot blocks.
struct EncodedMatrix {
  Eigen::MatrixXd values;
  std::shared_ptr<const Encoding> encoding;
  std::vector<std::string> row_ids;

  std::size_t n_rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
};

inline EncodedMatrix encode(const Dataset& data, std::shared_ptr<const Encoding> enc) {
  detail::require(enc != nullptr, "encode: null encoding");
  detail::require(data.schema() == enc->schema(), "encode: dataset schema does not match encoding");
  const auto n = static_cast<Eigen::Index>(data.n_rows());
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(enc->dim()));
  for (std::size_t f = 0; f < enc->schema().size(); ++f) {
    const auto& b = enc->block(f);
    if (enc->schema().at(f).is_continuous()) {
      const Eigen::VectorXd& col = data.continuous_column(f);
      X.col(static_cast<Eigen::Index>(b.start)) = (col.array() - enc->mean(f)) / enc->stddev(f);
    } else {
      for (std::size_t r = 0; r < data.n_rows(); ++r) {
        const int idx = data.categorical_index(r, f);
        X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(b.start + idx)) = 1.0;
      }
    }
  }
  return EncodedMatrix{std::move(X), std::move(enc), data.row_ids()};
}

inline EncodedMatrix encode(const Dataset& data, const Encoding& enc) {
  return encode(data, std::make_shared<const Encoding>(enc));
}

}  // namespace oodtk
