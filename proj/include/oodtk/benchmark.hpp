#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "oodtk/attribution.hpp"
#include "oodtk/estimators/estimator.hpp"

namespace oodtk {

/// Per-estimator timing of single-sample inference and single-sample SHAP.
/// Timing runs are strictly sequential; wall-clock (monotonic) seconds.
struct TimingRow {
  std::string estimator;
  std::string metric;
  double inference_mean_s = 0;
  double inference_std_s = 0;
  double shap_mean_s = 0;
  double shap_std_s = 0;
  int n_inference = 0;
  int n_shap = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& samples) {
  return {mean_of(samples), population_std(samples)};
}

}  // namespace detail

/// Times score() on a single-row matrix: 10 warm-up calls, then n_reps timed.
inline std::pair<double, double> time_inference(const FittedEstimator& est,
                                                const Eigen::RowVectorXd& sample,
                                                int n_reps = 1000, int warmup = 10) {
  detail::require(n_reps >= 1, "time_inference: n_reps must be >= 1");
  const Eigen::MatrixXd row = sample;
  double sink = 0;
  for (int i = 0; i < warmup; ++i) sink += est.score(row)(0);
  std::vector<double> seconds;
  seconds.reserve(static_cast<std::size_t>(n_reps));
  for (int i = 0; i < n_reps; ++i) {
    const auto start = std::chrono::steady_clock::now();
    sink += est.score(row)(0);
    const auto stop = std::chrono::steady_clock::now();
    seconds.push_back(std::chrono::duration<double>(stop - start).count());
  }
  detail::require(std::isfinite(sink), "time_inference: non-finite score");
  return detail::mean_std(seconds);
}

/// Times one full kernel_shap call per repetition with the module-default
/// coalition budget (unless overridden in the settings).
inline std::pair<double, double> time_shap(const FittedEstimator& est,
                                           const Eigen::RowVectorXd& sample,
                                           const EncodedMatrix& background, int n_reps = 5,
                                           AttributionSettings settings = {}) {
  detail::require(n_reps >= 1, "time_shap: n_reps must be >= 1");
  detail::require(background.encoding != nullptr, "time_shap: background has no encoding");
  const Encoding& enc = *background.encoding;
  const int m = static_cast<int>(enc.schema().size());
  const ScoreFn fn = score_fn_of(est);
  std::vector<double> seconds;
  seconds.reserve(static_cast<std::size_t>(n_reps));
  for (int i = 0; i < n_reps; ++i) {
    // same seed every repetition: deterministic estimators give identical
    // attributions while only the wall times vary
    const auto start = std::chrono::steady_clock::now();
    ShapAttribution att = kernel_shap(fn, enc, background.values, sample,
                                      settings.coalitions_for(m), settings.seed,
                                      settings.background_cap);
    const auto stop = std::chrono::steady_clock::now();
    detail::require(att.phi.allFinite(), "time_shap: non-finite attribution");
    seconds.push_back(std::chrono::duration<double>(stop - start).count());
  }
  return detail::mean_std(seconds);
}

inline TimingRow bench_estimator(const FittedEstimator& est, const Eigen::RowVectorXd& sample,
                                 const EncodedMatrix& background, int n_inference = 1000,
                                 int n_shap = 5, AttributionSettings settings = {}) {
  TimingRow row;
  row.estimator = est.name();
  row.metric = est.metric_label();
  auto [im, is] = time_inference(est, sample, n_inference);
  row.inference_mean_s = im;
  row.inference_std_s = is;
  auto [sm, ss] = time_shap(est, sample, background, n_shap, settings);
  row.shap_mean_s = sm;
  row.shap_std_s = ss;
  row.n_inference = n_inference;
  row.n_shap = n_shap;
  return row;
}

inline std::string timing_csv(const std::vector<TimingRow>& rows) {
  std::string out =
      "estimator,metric,inference_mean_s,inference_std_s,shap_mean_s,shap_std_s,"
      "n_inference,n_shap\n";
  for (const auto& r : rows) {
    out += r.estimator + "," + r.metric + "," + format_double(r.inference_mean_s) + "," +
           format_double(r.inference_std_s) + "," + format_double(r.shap_mean_s) + "," +
           format_double(r.shap_std_s) + "," + std::to_string(r.n_inference) + "," +
           std::to_string(r.n_shap) + "\n";
  }
  return out;
}

}  // namespace oodtk
