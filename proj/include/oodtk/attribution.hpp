#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "oodtk/common.hpp"
#include "oodtk/encoding.hpp"
#include "oodtk/estimators/factory.hpp"
#include "oodtk/groups.hpp"
#include "oodtk/split.hpp"

namespace oodtk {

using ScoreFn = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

/// Default coalition budget: 2 M + 2048 sampled coalitions for M raw features.
inline int default_n_coalitions(int n_raw_features) { return 2 * n_raw_features + 2048; }

/// Shapley kernel weight pi(s) = (M-1) / (C(M,s) * s * (M-s)) for 0 < s < M.
inline double shapley_kernel_weight(int m, int s) {
  double comb = 1.0;
  for (int i = 1; i <= s; ++i) comb *= static_cast<double>(m - i + 1) / static_cast<double>(i);
  return static_cast<double>(m - 1) / (comb * static_cast<double>(s) * static_cast<double>(m - s));
}

/// Additive attribution of one scored row over raw features (a categorical's
/// one-hot block toggles atomically, so its columns share one phi).
struct ShapAttribution {
  std::string row_id;
  double base_value = 0;  // mean background score, phi_0
  double fx = 0;          // score of the explained row
  std::vector<std::string> feature_names;
  Eigen::VectorXd phi;  // one entry per raw feature

  double local_accuracy_gap() const { return std::abs(base_value + phi.sum() - fx); }
};

namespace detail {

struct Coalition {
  std::vector<bool> present;
  int size = 0;
};

/// All nonempty proper subsets when they fit in the budget, otherwise subsets
/// sampled by kernel-proportional size then uniform membership, deduplicated.
inline std::vector<Coalition> draw_coalitions(int m, int budget, Rng& rng) {
  std::vector<Coalition> out;
  const bool enumerable = m <= 24 && (1LL << m) - 2 <= static_cast<long long>(budget);
  if (enumerable) {
    for (unsigned bits = 1; bits + 1 < (1u << m); ++bits) {
      Coalition c;
      c.present.resize(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        if (bits & (1u << i)) {
          c.present[static_cast<std::size_t>(i)] = true;
          ++c.size;
        }
      }
      out.push_back(std::move(c));
    }
    return out;
  }

  // p(s) proportional to (M-1)/(s(M-s)), the kernel mass of each size
  std::vector<double> size_cdf(static_cast<std::size_t>(m - 1));
  double total = 0;
  for (int s = 1; s < m; ++s) {
    total += 1.0 / (static_cast<double>(s) * static_cast<double>(m - s));
    size_cdf[static_cast<std::size_t>(s - 1)] = total;
  }
  std::map<std::vector<bool>, bool> seen;
  std::vector<int> indices(static_cast<std::size_t>(m));
  std::iota(indices.begin(), indices.end(), 0);
  const long long max_attempts = 20LL * budget;
  for (long long attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < budget;
       ++attempt) {
    const double u = rng.uniform() * total;
    int s = 1;
    while (s < m - 1 && size_cdf[static_cast<std::size_t>(s - 1)] < u) ++s;
    rng.shuffle(indices);
    Coalition c;
    c.present.assign(static_cast<std::size_t>(m), false);
    for (int i = 0; i < s; ++i) c.present[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])] = true;
    c.size = s;
    if (seen.emplace(c.present, true).second) out.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

/// KernelSHAP over a novelty score function. Coalitions are drawn over raw
/// features; absent features are imputed marginally by substituting background
/// rows (capped at `background_cap` seeded rows). A constrained weighted least
/// squares with the Shapley kernel recovers phi, with the full and empty
/// coalitions pinned exactly: phi_0 = mean background score and
/// phi_0 + sum(phi) = f(x).
inline ShapAttribution kernel_shap(const ScoreFn& score_fn, const Encoding& encoding,
                                   const Eigen::MatrixXd& background,
                                   const Eigen::RowVectorXd& x, int n_coalitions,
                                   std::uint64_t seed, int background_cap = 100) {
  const int m = static_cast<int>(encoding.schema().size());
  detail::require(background.rows() > 0, "kernel_shap: empty background");
  detail::require(background.cols() == static_cast<Eigen::Index>(encoding.dim()) &&
                      x.cols() == static_cast<Eigen::Index>(encoding.dim()),
                  "kernel_shap: width does not match the encoding");
  detail::require(n_coalitions >= 2 * m + 2,
                  "kernel_shap: n_coalitions must be at least 2*M+2 = " + std::to_string(2 * m + 2));

  Rng rng(seed);
  // seeded background subsample
  std::vector<std::size_t> order(static_cast<std::size_t>(background.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const int nb = std::min<int>(background_cap, static_cast<int>(background.rows()));
  Eigen::MatrixXd bg(nb, background.cols());
  for (int i = 0; i < nb; ++i) bg.row(i) = background.row(static_cast<Eigen::Index>(order[static_cast<std::size_t>(i)]));

  ShapAttribution att;
  att.base_value = score_fn(bg).mean();
  att.fx = score_fn(Eigen::MatrixXd(x))(0);
  for (const auto& f : encoding.schema().features()) att.feature_names.push_back(f.name);

  const auto coalitions = detail::draw_coalitions(m, n_coalitions - 2, rng);
  detail::require(static_cast<int>(coalitions.size()) >= m,
                  "kernel_shap: too few distinct coalitions; increase n_coalitions");

  // value of each coalition: mean score over background rows with the present
  // features' encoded blocks overwritten by x
  Eigen::VectorXd v(coalitions.size());
  Eigen::MatrixXd composed(nb, background.cols());
  for (std::size_t ci = 0; ci < coalitions.size(); ++ci) {
    composed = bg;
    for (int f = 0; f < m; ++f) {
      if (!coalitions[ci].present[static_cast<std::size_t>(f)]) continue;
      const auto& block = encoding.block(static_cast<std::size_t>(f));
      composed.middleCols(static_cast<Eigen::Index>(block.start),
                          static_cast<Eigen::Index>(block.width)) =
          x.middleCols(static_cast<Eigen::Index>(block.start),
                       static_cast<Eigen::Index>(block.width))
              .replicate(nb, 1);
    }
    v(static_cast<Eigen::Index>(ci)) = score_fn(composed).mean();
  }

  // constrained WLS: minimize sum_z w_z (v(z) - phi_0 - z . phi)^2
  // subject to 1 . phi = fx - phi_0
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd aty = Eigen::VectorXd::Zero(m);
  for (std::size_t ci = 0; ci < coalitions.size(); ++ci) {
    const double w = shapley_kernel_weight(m, coalitions[ci].size);
    const double y = v(static_cast<Eigen::Index>(ci)) - att.base_value;
    for (int a = 0; a < m; ++a) {
      if (!coalitions[ci].present[static_cast<std::size_t>(a)]) continue;
      aty(a) += w * y;
      for (int b = 0; b < m; ++b) {
        if (coalitions[ci].present[static_cast<std::size_t>(b)]) ata(a, b) += w;
      }
    }
  }
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
  kkt.topLeftCorner(m, m) = 2.0 * ata;
  kkt.topRightCorner(m, 1).setOnes();
  kkt.bottomLeftCorner(1, m).setOnes();
  Eigen::VectorXd rhs(m + 1);
  rhs.head(m) = 2.0 * aty;
  rhs(m) = att.fx - att.base_value;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible()) {
    throw Error("kernel_shap: singular regression system; increase n_coalitions");
  }
  att.phi = lu.solve(rhs).head(m);
  return att;
}

inline ScoreFn score_fn_of(const FittedEstimator& est) {
  return [&est](const Eigen::MatrixXd& X) { return est.score(X); };
}

/// Knobs shared by the two interpretability tests.
struct AttributionSettings {
  int n_coalitions = 0;  // 0: default_n_coalitions(M)
  int background_cap = 100;
  int max_rows = 100;  // SHAP budget for the dataset-level test
  std::uint64_t seed = 0;

  int coalitions_for(int m) const {
    return n_coalitions > 0 ? n_coalitions : default_n_coalitions(m);
  }
};

/// Dataset-level interpretability test: split the pool on one feature, fit on
/// the in-distribution side, explain the highest-scoring OOD rows, and rank
/// the split feature by mean |phi|.
struct SplitFeatureResult {
  std::string split_feature;
  std::string estimator;
  int rank = 0;  // 1 = most important
  std::vector<std::pair<std::string, double>> importance;  // mean |phi|, descending
};

inline SplitFeatureResult split_feature_rank(const Dataset& pool, const std::string& split_feature,
                                             const Predicate& predicate,
                                             const EstimatorConfig& estimator_config,
                                             const AttributionSettings& settings) {
  detail::require(pool.schema().index_of(split_feature) >= 0,
                  "split_feature_rank: unknown feature '" + split_feature + "'");
  std::vector<std::size_t> ood_rows, id_rows;
  for (std::size_t r = 0; r < pool.n_rows(); ++r) {
    (predicate(pool, r) ? ood_rows : id_rows).push_back(r);
  }
  detail::require(!ood_rows.empty() && !id_rows.empty(),
                  "split_feature_rank: predicate must split the pool into two non-empty cohorts");

  const Dataset id_side = pool.subset(id_rows);
  const Dataset ood_side = pool.subset(ood_rows);

  // hold out a slice of the in-distribution side for early stopping
  Rng rng(mix_seed(settings.seed, 0x51));
  std::vector<std::size_t> order(id_side.n_rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const std::size_t n_val = std::max<std::size_t>(1, id_side.n_rows() / 7);
  std::vector<std::size_t> val_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_rows(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  const Dataset train = id_side.subset(train_rows);
  const Dataset val = id_side.subset(val_rows);

  auto enc = std::make_shared<const Encoding>(fit_encoding(train));
  EncodedMatrix train_enc = encode(train, enc);
  EncodedMatrix val_enc = encode(val, enc);
  EncodedMatrix ood_enc = encode(ood_side, enc);

  EstimatorConfig config = estimator_config;
  config.seed = mix_seed(settings.seed, 0x52);
  auto model = fit_estimator(config, train_enc, val_enc);
  const Eigen::VectorXd ood_scores = model->score(ood_enc);

  // explain the highest-scoring OOD rows
  std::vector<Eigen::Index> by_score(static_cast<std::size_t>(ood_scores.size()));
  std::iota(by_score.begin(), by_score.end(), Eigen::Index{0});
  std::stable_sort(by_score.begin(), by_score.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return ood_scores(a) > ood_scores(b); });
  const std::size_t n_explain = std::min<std::size_t>(static_cast<std::size_t>(settings.max_rows),
                                                      by_score.size());

  const int m = static_cast<int>(enc->schema().size());
  Eigen::VectorXd mean_abs_phi = Eigen::VectorXd::Zero(m);
  const ScoreFn fn = score_fn_of(*model);
  for (std::size_t i = 0; i < n_explain; ++i) {
    ShapAttribution att =
        kernel_shap(fn, *enc, train_enc.values, ood_enc.values.row(by_score[i]),
                    settings.coalitions_for(m), mix_seed(settings.seed, 0x53 + i),
                    settings.background_cap);
    mean_abs_phi += att.phi.cwiseAbs();
  }
  mean_abs_phi /= static_cast<double>(n_explain);

  SplitFeatureResult result;
  result.split_feature = split_feature;
  result.estimator = config.name;
  std::vector<int> feat_order(static_cast<std::size_t>(m));
  std::iota(feat_order.begin(), feat_order.end(), 0);
  std::stable_sort(feat_order.begin(), feat_order.end(),
                   [&](int a, int b) { return mean_abs_phi(a) > mean_abs_phi(b); });
  for (int i = 0; i < m; ++i) {
    const auto& name = enc->schema().at(static_cast<std::size_t>(feat_order[static_cast<std::size_t>(i)])).name;
    result.importance.emplace_back(name, mean_abs_phi(feat_order[static_cast<std::size_t>(i)]));
    if (name == split_feature) result.rank = i + 1;
  }
  return result;
}

/// One per-outlier explanation: the top features by |phi| with the raw value
/// and the in-distribution reference for clinician comparison (mean for
/// continuous features, the level's background prevalence for categoricals).
struct OutlierExplanation {
  struct FeatureContribution {
    std::string name;
    double phi = 0;
    bool categorical = false;
    double numeric_value = 0;  // raw value (continuous)
    std::string level;         // raw level (categorical)
    double in_dist_mean = 0;   // raw mean or level prevalence

    nlohmann::json to_json() const {
      nlohmann::json j;
      j["name"] = name;
      j["phi"] = phi;
      if (categorical) j["value"] = level;
      else j["value"] = numeric_value;
      j["in_dist_mean"] = in_dist_mean;
      return j;
    }
  };

  std::string row_id;
  double score = 0;
  double base_value = 0;
  std::vector<FeatureContribution> features;  // ordered by |phi| descending

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["row_id"] = row_id;
    j["score"] = score;
    j["base_value"] = base_value;
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : features) feats.push_back(f.to_json());
    j["features"] = std::move(feats);
    return j;
  }
};

/// Explains the top_n highest-scoring rows of `test` against the background.
inline std::vector<OutlierExplanation> explain_outliers(const FittedEstimator& est,
                                                        const EncodedMatrix& test,
                                                        const EncodedMatrix& background,
                                                        std::size_t top_n,
                                                        std::size_t top_k_features,
                                                        const AttributionSettings& settings) {
  detail::require(top_n <= test.n_rows(), "explain_outliers: top_n exceeds the test size");
  detail::require(test.encoding != nullptr, "explain_outliers: test matrix has no encoding");
  const Encoding& enc = *test.encoding;
  const int m = static_cast<int>(enc.schema().size());

  std::vector<OutlierExplanation> out;
  if (top_n == 0) return out;

  const Eigen::VectorXd scores = est.score(test);
  std::vector<Eigen::Index> by_score(static_cast<std::size_t>(scores.size()));
  std::iota(by_score.begin(), by_score.end(), Eigen::Index{0});
  std::stable_sort(by_score.begin(), by_score.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });

  const ScoreFn fn = score_fn_of(est);
  const Eigen::RowVectorXd bg_mean = background.values.colwise().mean();

  for (std::size_t i = 0; i < top_n; ++i) {
    const Eigen::Index row = by_score[i];
    const Eigen::RowVectorXd x = test.values.row(row);
    ShapAttribution att = kernel_shap(fn, enc, background.values, x,
                                      settings.coalitions_for(m),
                                      mix_seed(settings.seed, 0x77 + i), settings.background_cap);
    OutlierExplanation ex;
    ex.row_id = test.row_ids.empty() ? std::to_string(row) : test.row_ids[static_cast<std::size_t>(row)];
    ex.score = scores(row);
    ex.base_value = att.base_value;

    std::vector<int> feat_order(static_cast<std::size_t>(m));
    std::iota(feat_order.begin(), feat_order.end(), 0);
    std::stable_sort(feat_order.begin(), feat_order.end(), [&](int a, int b) {
      return std::abs(att.phi(a)) > std::abs(att.phi(b));
    });
    const std::size_t k = std::min(top_k_features, static_cast<std::size_t>(m));
    for (std::size_t fi = 0; fi < k; ++fi) {
      const auto f = static_cast<std::size_t>(feat_order[fi]);
      const auto& feat = enc.schema().at(f);
      const auto& block = enc.block(f);
      OutlierExplanation::FeatureContribution fc;
      fc.name = feat.name;
      fc.phi = att.phi(feat_order[fi]);
      if (feat.is_continuous()) {
        fc.numeric_value = enc.decode_continuous(x(static_cast<Eigen::Index>(block.start)), f);
        fc.in_dist_mean =
            enc.decode_continuous(bg_mean(static_cast<Eigen::Index>(block.start)), f);
      } else {
        fc.categorical = true;
        const int level = enc.decode_categorical(x, f);
        fc.level = feat.levels[static_cast<std::size_t>(level)];
        fc.in_dist_mean = bg_mean(static_cast<Eigen::Index>(block.start) + level);
      }
      ex.features.push_back(std::move(fc));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace oodtk
