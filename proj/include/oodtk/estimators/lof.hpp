#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "oodtk/estimators/estimator.hpp"

namespace oodtk {

/// Local Outlier Factor in novelty mode: the reference set is fixed at fit
/// time and query points are scored against it (a query never counts as its
/// own neighbor). Classic definitions: k-distance, reachability distance
/// reach_k(a,b) = max(kdist(b), d(a,b)), local reachability density
/// lrd = 1 / mean reach, LOF(a) = mean over a's neighbors of lrd(b) / lrd(a).
/// Neighborhoods include every point within the k-distance (ties included).
class LofEstimator final : public FittedEstimator {
 public:
  static std::unique_ptr<LofEstimator> fit(EstimatorConfig config,
                                           std::shared_ptr<const Encoding> enc,
                                           const Eigen::MatrixXd& train) {
    config.validate();
    detail::require(config.k < train.rows(),
                    "lof: k (" + std::to_string(config.k) + ") must be smaller than the " +
                        "reference set size (" + std::to_string(train.rows()) + ")");
    return std::unique_ptr<LofEstimator>(new LofEstimator(
        std::move(config), std::move(enc), static_cast<int>(train.cols()), train));
  }

  std::string metric_label() const override { return "outlier_score"; }

  const Eigen::MatrixXd& reference() const { return ref_; }

  static std::unique_ptr<LofEstimator> from_json(EstimatorConfig config,
                                                 std::shared_ptr<const Encoding> enc,
                                                 const nlohmann::json& j) {
    const int n = j.at("n").get<int>();
    const int d = j.at("dim").get<int>();
    Eigen::MatrixXd ref(n, d);
    std::size_t at = 0;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < d; ++c) ref(r, c) = j.at("reference")[at++].get<double>();
    }
    detail::require(config.k < n, "lof: serialized reference smaller than k");
    return std::unique_ptr<LofEstimator>(new LofEstimator(std::move(config), std::move(enc), d, ref));
  }

 protected:
  Eigen::VectorXd score_rows(const Eigen::MatrixXd& X) const override {
    Eigen::VectorXd scores(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      scores(i) = score_one(X.row(i));
    }
    return scores;
  }

  nlohmann::json params_json() const override {
    nlohmann::json j;
    j["n"] = static_cast<int>(ref_.rows());
    j["dim"] = dim_;
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index i = 0; i < ref_.rows(); ++i) {
      for (Eigen::Index c = 0; c < ref_.cols(); ++c) r.push_back(ref_(i, c));
    }
    j["reference"] = std::move(r);
    return j;
  }

 private:
  LofEstimator(EstimatorConfig config, std::shared_ptr<const Encoding> enc, int dim,
               Eigen::MatrixXd ref)
      : FittedEstimator(std::move(config), std::move(enc), dim), ref_(std::move(ref)) {
    precompute();
  }

  // Distances of exactly 0 are lifted to 1e-12 before inversion so duplicate
  // rows do not produce infinite densities.
  static double guard_zero(double x) { return x == 0.0 ? 1e-12 : x; }

  struct Neighborhood {
    std::vector<Eigen::Index> members;
    double kdist = 0;
  };

  Neighborhood neighbors_of(const Eigen::VectorXd& dists, Eigen::Index self) const {
    const int k = config_.k;
    std::vector<Eigen::Index> order;
    order.reserve(static_cast<std::size_t>(dists.size()));
    for (Eigen::Index j = 0; j < dists.size(); ++j) {
      if (j != self) order.push_back(j);
    }
    std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return dists(a) < dists(b); });
    Neighborhood nb;
    nb.kdist = dists(order[static_cast<std::size_t>(k - 1)]);
    for (Eigen::Index j = 0; j < dists.size(); ++j) {
      if (j != self && dists(j) <= nb.kdist) nb.members.push_back(j);
    }
    return nb;
  }

  Eigen::VectorXd distances_to_reference(const Eigen::RowVectorXd& x) const {
    return (ref_.rowwise() - x).rowwise().norm();
  }

  void precompute() {
    const auto n = ref_.rows();
    kdist_.resize(n);
    neighborhoods_.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd dists = distances_to_reference(ref_.row(i));
      neighborhoods_[static_cast<std::size_t>(i)] = neighbors_of(dists, i);
      kdist_(i) = neighborhoods_[static_cast<std::size_t>(i)].kdist;
    }
    lrd_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& nb = neighborhoods_[static_cast<std::size_t>(i)];
      double reach_sum = 0;
      for (Eigen::Index j : nb.members) {
        const double dist = (ref_.row(i) - ref_.row(j)).norm();
        reach_sum += guard_zero(std::max(kdist_(j), dist));
      }
      lrd_(i) = static_cast<double>(nb.members.size()) / reach_sum;
    }
  }

  double score_one(const Eigen::RowVectorXd& x) const {
    const Eigen::VectorXd dists = distances_to_reference(x);
    const Neighborhood nb = neighbors_of(dists, -1);
    double reach_sum = 0;
    double lrd_neighbors = 0;
    for (Eigen::Index j : nb.members) {
      reach_sum += guard_zero(std::max(kdist_(j), dists(j)));
      lrd_neighbors += lrd_(j);
    }
    const double m = static_cast<double>(nb.members.size());
    const double lrd_query = m / reach_sum;
    return (lrd_neighbors / m) / lrd_query;
  }

  Eigen::MatrixXd ref_;
  Eigen::VectorXd kdist_;
  Eigen::VectorXd lrd_;
  std::vector<Neighborhood> neighborhoods_;
};

}  // namespace oodtk
