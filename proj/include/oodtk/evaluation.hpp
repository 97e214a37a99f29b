#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "oodtk/common.hpp"
#include "oodtk/encoding.hpp"
#include "oodtk/estimators/factory.hpp"
#include "oodtk/split.hpp"
#include "oodtk/synthetic.hpp"

namespace oodtk {

/// Mann-Whitney AUC: the probability that a random OOD score exceeds a random
/// in-distribution score, ties counted half. Equals the trapezoidal ROC area.
inline double auc_roc(const std::vector<double>& in_scores,
                      const std::vector<double>& ood_scores) {
  detail::require(!in_scores.empty() && !ood_scores.empty(), "auc_roc: empty score list");
  struct Entry {
    double score;
    bool ood;
  };
  std::vector<Entry> all;
  all.reserve(in_scores.size() + ood_scores.size());
  for (double s : in_scores) {
    detail::require(std::isfinite(s), "auc_roc: non-finite score");
    all.push_back({s, false});
  }
  for (double s : ood_scores) {
    detail::require(std::isfinite(s), "auc_roc: non-finite score");
    all.push_back({s, true});
  }
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // midranks over tie groups; rank sum of the OOD cohort gives U
  double rank_sum_ood = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].ood) rank_sum_ood += midrank;
    }
    i = j;
  }
  const double n_ood = static_cast<double>(ood_scores.size());
  const double n_in = static_cast<double>(in_scores.size());
  const double u = rank_sum_ood - n_ood * (n_ood + 1.0) / 2.0;
  return u / (n_in * n_ood);
}

inline double auc_roc(const Eigen::VectorXd& in_scores, const Eigen::VectorXd& ood_scores) {
  return auc_roc(std::vector<double>(in_scores.data(), in_scores.data() + in_scores.size()),
                 std::vector<double>(ood_scores.data(), ood_scores.data() + ood_scores.size()));
}

/// One (estimator x group) cell: per-trial AUCs plus any per-trial failures.
struct AUCResult {
  std::string estimator;
  std::string group;
  std::vector<double> trial_aucs;
  std::vector<int> trial_ids;  // the trial index behind each AUC
  std::vector<std::string> errors;

  int n_trials() const { return static_cast<int>(trial_aucs.size()); }
  bool failed() const { return !errors.empty(); }
  double mean() const { return trial_aucs.empty() ? std::nan("") : mean_of(trial_aucs); }
  double stddev() const { return trial_aucs.empty() ? std::nan("") : population_std(trial_aucs); }
};

struct EvaluationGrid {
  std::vector<std::string> estimator_names;
  std::vector<std::string> group_names;
  std::vector<std::vector<AUCResult>> cells;  // [estimator][group]
  std::vector<std::uint64_t> trial_seeds;
  /// Models fitted with the first trial's seed, reused for distributions,
  /// explanations and benchmarks. Null where that fit failed.
  std::vector<std::shared_ptr<const FittedEstimator>> first_trial_models;

  bool any_failure() const {
    for (const auto& row : cells) {
      for (const auto& cell : row) {
        if (cell.failed()) return true;
      }
    }
    return false;
  }
};

/// Refits every estimator n_trials times (trial t uses seed base_seed + t),
/// scores the test set and every group, and aggregates per-cell AUCs. A failed
/// fit is recorded in each of that estimator's cells for the trial and leaves
/// all other cells intact. Jobs are independent (estimator x trial) fits and
/// may run on up to n_jobs threads.
inline EvaluationGrid run_trials(const std::vector<EstimatorConfig>& estimators,
                                 const EncodedMatrix& train, const EncodedMatrix& val,
                                 const EncodedMatrix& test,
                                 const std::vector<std::pair<std::string, EncodedMatrix>>& groups,
                                 int n_trials, std::uint64_t base_seed, int n_jobs = 1) {
  detail::require(n_trials >= 1, "run_trials: n_trials must be >= 1");
  detail::require(!estimators.empty(), "run_trials: no estimators");
  detail::require(!groups.empty(), "run_trials: no OOD groups");

  EvaluationGrid grid;
  for (const auto& c : estimators) grid.estimator_names.push_back(c.name);
  for (const auto& g : groups) grid.group_names.push_back(g.first);
  for (int t = 0; t < n_trials; ++t) grid.trial_seeds.push_back(base_seed + static_cast<std::uint64_t>(t));
  grid.cells.resize(estimators.size());
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    for (const auto& g : groups) {
      grid.cells[e].push_back(AUCResult{estimators[e].name, g.first, {}, {}});
    }
  }
  grid.first_trial_models.resize(estimators.size());

  struct JobResult {
    std::vector<double> group_aucs;  // per group, when ok
    std::string error;
    bool ok = false;
    std::shared_ptr<const FittedEstimator> model;
  };
  const std::size_t n_jobs_total = estimators.size() * static_cast<std::size_t>(n_trials);
  std::vector<JobResult> results(n_jobs_total);

  auto run_job = [&](std::size_t job) {
    const std::size_t e = job / static_cast<std::size_t>(n_trials);
    const int t = static_cast<int>(job % static_cast<std::size_t>(n_trials));
    JobResult& out = results[job];
    try {
      EstimatorConfig config = estimators[e];
      config.seed = base_seed + static_cast<std::uint64_t>(t);
      auto model = fit_estimator(config, train, val);
      const Eigen::VectorXd test_scores = model->score(test);
      for (const auto& g : groups) {
        out.group_aucs.push_back(auc_roc(test_scores, model->score(g.second)));
      }
      if (t == 0) out.model = std::move(model);
      out.ok = true;
    } catch (const std::exception& ex) {
      out.error = ex.what();
    }
  };

  if (n_jobs <= 1) {
    for (std::size_t job = 0; job < n_jobs_total; ++job) run_job(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    const int n_workers = std::min<int>(n_jobs, static_cast<int>(n_jobs_total));
    for (int w = 0; w < n_workers; ++w) {
      workers.emplace_back([&] {
        for (std::size_t job = next.fetch_add(1); job < n_jobs_total; job = next.fetch_add(1)) {
          run_job(job);
        }
      });
    }
    for (auto& w : workers) w.join();
  }

  for (std::size_t e = 0; e < estimators.size(); ++e) {
    for (int t = 0; t < n_trials; ++t) {
      const JobResult& r = results[e * static_cast<std::size_t>(n_trials) + static_cast<std::size_t>(t)];
      if (r.ok) {
        for (std::size_t g = 0; g < groups.size(); ++g) {
          grid.cells[e][g].trial_aucs.push_back(r.group_aucs[g]);
          grid.cells[e][g].trial_ids.push_back(t);
        }
        if (t == 0) grid.first_trial_models[e] = r.model;
      } else {
        for (std::size_t g = 0; g < groups.size(); ++g) {
          grid.cells[e][g].errors.push_back("trial " + std::to_string(t) + ": " + r.error);
        }
      }
    }
  }
  return grid;
}

/// Histogram of one cohort's scores clipped to the in-distribution test
/// percentile window.
struct ScoreDistribution {
  std::string estimator;
  std::string cohort;  // "test" or a group name
  double clip_lo = 0;
  double clip_hi = 0;
  std::vector<double> bin_edges;  // bins + 1 edges over [clip_lo, clip_hi]
  std::vector<int> counts;
  std::vector<double> clipped;  // clipped sample list
};

/// Clip bounds come from the 5th/95th percentile of the in-distribution test
/// scores only and are shared by every cohort of the estimator.
inline std::vector<ScoreDistribution> score_distribution(
    const std::string& estimator_name, const Eigen::VectorXd& test_scores,
    const std::vector<std::pair<std::string, Eigen::VectorXd>>& group_scores, int bins) {
  detail::require(test_scores.size() > 0, "score_distribution: empty test scores");
  detail::require(bins >= 1, "score_distribution: bins must be >= 1");
  std::vector<double> test_list(test_scores.data(), test_scores.data() + test_scores.size());
  const double lo = percentile(test_list, 5.0);
  const double hi = percentile(test_list, 95.0);

  auto make = [&](const std::string& cohort, const Eigen::VectorXd& scores) {
    ScoreDistribution d;
    d.estimator = estimator_name;
    d.cohort = cohort;
    d.clip_lo = lo;
    d.clip_hi = hi;
    const double width = hi - lo;
    for (int b = 0; b <= bins; ++b) {
      d.bin_edges.push_back(lo + width * static_cast<double>(b) / static_cast<double>(bins));
    }
    d.counts.assign(static_cast<std::size_t>(bins), 0);
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      const double c = std::clamp(scores(i), lo, hi);
      d.clipped.push_back(c);
      int bin = width > 0 ? static_cast<int>((c - lo) / width * bins) : 0;
      bin = std::clamp(bin, 0, bins - 1);
      ++d.counts[static_cast<std::size_t>(bin)];
    }
    return d;
  };

  std::vector<ScoreDistribution> out;
  out.push_back(make("test", test_scores));
  for (const auto& g : group_scores) out.push_back(make(g.first, g.second));
  return out;
}

/// AUC as a function of planted shift magnitude: estimators are fitted once on
/// the unshifted data, then scored against cohorts generated at each
/// magnitude. The magnitude scales the base spec's shift pattern.
struct GradedShiftCurve {
  std::vector<double> magnitudes;
  std::vector<std::string> estimator_names;
  std::vector<std::vector<double>> auc;  // [estimator][magnitude]
};

inline GradedShiftCurve graded_shift_curve(const std::vector<EstimatorConfig>& estimators,
                                           const SyntheticSpec& base_spec,
                                           const std::vector<double>& magnitudes,
                                           const SplitSpec& split_spec) {
  detail::require(!magnitudes.empty() && magnitudes.front() == 0.0,
                  "graded_shift_curve: magnitudes must start at 0");
  for (std::size_t i = 1; i < magnitudes.size(); ++i) {
    detail::require(magnitudes[i] >= magnitudes[i - 1],
                    "graded_shift_curve: magnitudes must be sorted ascending");
  }

  auto [in_dist, discard] = generate_synthetic(base_spec);
  (void)discard;
  Split s = split(in_dist, split_spec);
  auto enc = std::make_shared<const Encoding>(fit_encoding(s.train));
  EncodedMatrix train = encode(s.train, enc);
  EncodedMatrix val = encode(s.val, enc);
  EncodedMatrix test = encode(s.test, enc);

  GradedShiftCurve curve;
  curve.magnitudes = magnitudes;
  for (const auto& c : estimators) curve.estimator_names.push_back(c.name);
  curve.auc.resize(estimators.size());

  std::vector<std::unique_ptr<FittedEstimator>> models;
  for (const auto& c : estimators) models.push_back(fit_estimator(c, train, val));
  std::vector<Eigen::VectorXd> test_scores;
  for (const auto& m : models) test_scores.push_back(m->score(test));

  for (std::size_t mi = 0; mi < magnitudes.size(); ++mi) {
    // same seed throughout: the cohort is the same-law companion draw, with
    // the shift pattern scaled by the magnitude
    SyntheticSpec cohort_spec = base_spec;
    for (auto& sft : cohort_spec.shift) sft *= magnitudes[mi];
    auto [unused, cohort] = generate_synthetic(cohort_spec);
    (void)unused;
    EncodedMatrix cohort_enc = encode(cohort, enc);
    for (std::size_t e = 0; e < models.size(); ++e) {
      curve.auc[e].push_back(auc_roc(test_scores[e], models[e]->score(cohort_enc)));
    }
  }
  return curve;
}

}  // namespace oodtk
