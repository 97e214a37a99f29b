#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "oodtk/common.hpp"
#include "oodtk/dataset.hpp"

namespace oodtk {

/// Recipe for a desk-scale mixed-type dataset: a correlated Gaussian
/// continuous block (latent factor model, rank `latent_rank`; 0 means
/// independent features) plus categoricals drawn from fixed level
/// probabilities. The shifted companion re-draws from the same law, then adds
/// `shift[j]` in units of the in-distribution column std to continuous feature
/// j and flips categoricals to a uniformly random other level with probability
/// `flip_prob`.
struct SyntheticSpec {
  std::size_t n_rows = 1000;
  std::size_t n_continuous = 10;
  std::vector<int> categorical_levels;  // one entry per categorical feature, each >= 2
  std::size_t latent_rank = 0;
  std::vector<double> shift;  // length n_continuous, in units of per-feature std
  double flip_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(n_rows >= 1, "synthetic: n_rows must be >= 1");
    detail::require(n_continuous + categorical_levels.size() >= 1, "synthetic: no features");
    detail::require(shift.size() == n_continuous, "synthetic: shift length must equal n_continuous");
    detail::require(flip_prob >= 0.0 && flip_prob <= 1.0, "synthetic: flip_prob must be in [0,1]");
    detail::require(latent_rank <= n_continuous, "synthetic: latent_rank exceeds n_continuous");
    for (int l : categorical_levels) {
      detail::require(l >= 2, "synthetic: categorical features need >= 2 levels");
    }
  }

  FeatureSchema schema() const {
    std::vector<Feature> feats;
    for (std::size_t j = 0; j < n_continuous; ++j) {
      feats.push_back({"cont_" + std::to_string(j), FeatureKind::Continuous, {}});
    }
    for (std::size_t c = 0; c < categorical_levels.size(); ++c) {
      Feature f;
      f.name = "cat_" + std::to_string(c);
      f.kind = FeatureKind::Categorical;
      for (int l = 0; l < categorical_levels[c]; ++l) f.levels.push_back("v" + std::to_string(l));
      feats.push_back(std::move(f));
    }
    return FeatureSchema(std::move(feats));
  }
};

namespace detail {

/// Level probabilities proportional to 1, 1/2, ..., 1/L (fixed, non-uniform).
inline std::vector<double> level_probs(int n_levels) {
  std::vector<double> p(static_cast<std::size_t>(n_levels));
  double total = 0;
  for (int l = 0; l < n_levels; ++l) {
    p[l] = 1.0 / static_cast<double>(l + 1);
    total += p[l];
  }
  for (auto& x : p) x /= total;
  return p;
}

inline int sample_level(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  for (std::size_t l = 0; l < probs.size(); ++l) {
    acc += probs[l];
    if (u < acc) return static_cast<int>(l);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace detail

/// Deterministic in (spec, seed). Returns (in_dist, shifted).
inline std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const FeatureSchema schema = spec.schema();
  Rng rng(spec.seed);
  const auto n = static_cast<Eigen::Index>(spec.n_rows);
  const auto dc = static_cast<Eigen::Index>(spec.n_continuous);
  const auto r = static_cast<Eigen::Index>(spec.latent_rank);

  // Mixing matrix for the latent factor model; entries ~ N(0, 1/rank) so each
  // feature has unit-order variance regardless of rank.
  Eigen::MatrixXd mixing(dc, r);
  for (Eigen::Index j = 0; j < dc; ++j) {
    for (Eigen::Index k = 0; k < r; ++k) {
      mixing(j, k) = rng.normal() / std::sqrt(static_cast<double>(spec.latent_rank));
    }
  }
  const double noise_scale = spec.latent_rank == 0 ? 1.0 : 0.5;

  auto draw_continuous = [&](Eigen::Index rows) {
    Eigen::MatrixXd X(rows, dc);
    for (Eigen::Index i = 0; i < rows; ++i) {
      Eigen::VectorXd z(r);
      for (Eigen::Index k = 0; k < r; ++k) z(k) = rng.normal();
      for (Eigen::Index j = 0; j < dc; ++j) {
        const double factor_part = r > 0 ? mixing.row(j).dot(z) : 0.0;
        X(i, j) = factor_part + noise_scale * rng.normal();
      }
    }
    return X;
  };

  std::vector<std::vector<double>> cat_probs;
  for (int levels : spec.categorical_levels) cat_probs.push_back(detail::level_probs(levels));

  auto draw_categoricals = [&](std::size_t rows) {
    std::vector<std::vector<int>> cols(cat_probs.size());
    for (std::size_t c = 0; c < cat_probs.size(); ++c) {
      cols[c].reserve(rows);
      for (std::size_t i = 0; i < rows; ++i) cols[c].push_back(detail::sample_level(cat_probs[c], rng));
    }
    return cols;
  };

  const Eigen::MatrixXd base_cont = draw_continuous(n);
  const auto base_cats = draw_categoricals(spec.n_rows);
  Eigen::MatrixXd shifted_cont = draw_continuous(n);
  auto shifted_cats = draw_categoricals(spec.n_rows);

  // Shift in units of the in-distribution per-feature std.
  for (Eigen::Index j = 0; j < dc; ++j) {
    if (spec.shift[static_cast<std::size_t>(j)] == 0.0) continue;
    const double mean = base_cont.col(j).mean();
    const double sd = std::sqrt((base_cont.col(j).array() - mean).square().sum() /
                                static_cast<double>(spec.n_rows));
    shifted_cont.col(j).array() += spec.shift[static_cast<std::size_t>(j)] * sd;
  }
  for (std::size_t c = 0; c < shifted_cats.size(); ++c) {
    const int n_levels = spec.categorical_levels[c];
    for (auto& v : shifted_cats[c]) {
      if (spec.flip_prob > 0.0 && rng.uniform() < spec.flip_prob) {
        const int other = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_levels - 1)));
        v = other >= v ? other + 1 : other;
      }
    }
  }

  auto assemble = [&](const Eigen::MatrixXd& cont, const std::vector<std::vector<int>>& cats,
                      const std::string& prefix) {
    DatasetBuilder b(schema);
    for (std::size_t i = 0; i < spec.n_rows; ++i) b.add_row_id(prefix + std::to_string(i));
    for (std::size_t f = 0, ci = 0, ki = 0; f < schema.size(); ++f) {
      if (schema.at(f).is_continuous()) {
        for (Eigen::Index i = 0; i < n; ++i) b.add_continuous(f, cont(i, static_cast<Eigen::Index>(ci)));
        ++ci;
      } else {
        for (std::size_t i = 0; i < spec.n_rows; ++i) b.add_categorical(f, cats[ki][i]);
        ++ki;
      }
    }
    return b.build();
  };

  return {assemble(base_cont, base_cats, "in-"), assemble(shifted_cont, shifted_cats, "sh-")};
}

}  // namespace oodtk
