#include <doctest.h>

#include "oodtk/evaluation.hpp"
#include "oracles.hpp"

using namespace oodtk;

TEST_CASE("auc_roc on pinned examples") {
  CHECK(auc_roc(std::vector<double>{0, 0, 0}, std::vector<double>{1, 1, 1}) == 1.0);
  CHECK(auc_roc(std::vector<double>{0.3, 0.7}, std::vector<double>{0.3, 0.7}) == 0.5);
  // 8 pairs, 7 favorable
  CHECK(auc_roc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<double>{0.45, 0.9}) == 0.875);
}

TEST_CASE("auc_roc matches the pairwise oracle exactly, ties included") {
  Rng rng(5);
  for (int instance = 0; instance < 200; ++instance) {
    const int n_in = 1 + static_cast<int>(rng.uniform_index(50));
    const int n_ood = 1 + static_cast<int>(rng.uniform_index(50));
    std::vector<double> in(static_cast<std::size_t>(n_in)), ood(static_cast<std::size_t>(n_ood));
    // small discrete support forces plenty of ties
    for (auto& x : in) x = static_cast<double>(rng.uniform_index(8)) / 4.0;
    for (auto& x : ood) x = static_cast<double>(rng.uniform_index(8)) / 4.0 + 0.25;
    CHECK(auc_roc(in, ood) == oracles::brute_force_auc(in, ood));
  }
}

TEST_CASE("auc_roc complement identity and monotone invariance") {
  Rng rng(9);
  std::vector<double> in(40), ood(25);
  for (auto& x : in) x = rng.normal();
  for (auto& x : ood) x = rng.normal() + 0.8;
  const double a = auc_roc(in, ood);
  CHECK(auc_roc(ood, in) == doctest::Approx(1.0 - a).epsilon(1e-12));

  auto transform = [](std::vector<double> v) {
    for (auto& x : v) x = std::exp(0.5 * x) + 3.0;  // strictly increasing
    return v;
  };
  CHECK(auc_roc(transform(in), transform(ood)) == a);
}

TEST_CASE("same-law cohorts give an AUC near one half") {
  Rng rng(33);
  std::vector<double> a(1000), b(1000);
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();
  const double auc = auc_roc(a, b);
  CHECK(auc > 0.45);
  CHECK(auc < 0.55);
}

TEST_CASE("auc_roc rejects empty and non-finite input") {
  CHECK_THROWS_AS(auc_roc(std::vector<double>{}, std::vector<double>{1.0}), Error);
  CHECK_THROWS_AS(auc_roc(std::vector<double>{1.0}, std::vector<double>{}), Error);
  CHECK_THROWS_AS(auc_roc(std::vector<double>{std::nan("")}, std::vector<double>{1.0}), Error);
}

namespace {

struct Pipeline {
  std::shared_ptr<const Encoding> enc;
  EncodedMatrix train, val, test;
  std::vector<std::pair<std::string, EncodedMatrix>> groups;
};

Pipeline make_pipeline(double shift_sigma, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_rows = 600;
  spec.n_continuous = 6;
  spec.latent_rank = 2;
  spec.shift = std::vector<double>(6, 0.0);
  spec.shift[0] = shift_sigma;
  spec.shift[1] = shift_sigma;
  spec.seed = seed;
  auto [in_dist, shifted] = generate_synthetic(spec);
  Split s = split(in_dist, {0.7, 0.15, 0.15, seed});
  auto enc = std::make_shared<const Encoding>(fit_encoding(s.train));
  Pipeline p{enc, encode(s.train, enc), encode(s.val, enc), encode(s.test, enc),
             {{"shifted", encode(shifted, enc)}}};
  return p;
}

}  // namespace

TEST_CASE("run_trials: single trial has zero std, deterministic kinds repeat exactly") {
  Pipeline p = make_pipeline(2.0, 4);
  EstimatorConfig ppca = EstimatorConfig::defaults("ppca");
  ppca.q = 3;
  EstimatorConfig lof = EstimatorConfig::defaults("lof");

  EvaluationGrid one = run_trials({ppca, lof}, p.train, p.val, p.test, p.groups, 1, 100);
  for (const auto& row : one.cells) {
    for (const auto& cell : row) {
      CHECK(cell.n_trials() == 1);
      CHECK(cell.stddev() == 0.0);
    }
  }

  EvaluationGrid many = run_trials({ppca, lof}, p.train, p.val, p.test, p.groups, 4, 100);
  for (const auto& row : many.cells) {
    for (const auto& cell : row) {
      CHECK(cell.n_trials() == 4);
      // closed-form and memorizing estimators do not vary across seeds
      for (double a : cell.trial_aucs) CHECK(a == cell.trial_aucs[0]);
      CHECK(cell.stddev() == 0.0);
    }
  }
}

TEST_CASE("run_trials records failures and leaves the rest of the grid intact") {
  Pipeline p = make_pipeline(2.0, 5);
  EstimatorConfig bad = EstimatorConfig::defaults("ppca");
  bad.q = 99;  // q >= d fails at fit
  bad.name = "ppca_bad";
  EstimatorConfig lof = EstimatorConfig::defaults("lof");

  EvaluationGrid grid = run_trials({bad, lof}, p.train, p.val, p.test, p.groups, 2, 7);
  CHECK(grid.any_failure());
  const auto& bad_cell = grid.cells[0][0];
  CHECK(bad_cell.failed());
  CHECK(bad_cell.trial_aucs.empty());
  REQUIRE(bad_cell.errors.size() == 2);
  CHECK(bad_cell.errors[0].find("trial 0") != std::string::npos);
  const auto& good_cell = grid.cells[1][0];
  CHECK_FALSE(good_cell.failed());
  CHECK(good_cell.n_trials() == 2);
  CHECK(grid.first_trial_models[0] == nullptr);
  CHECK(grid.first_trial_models[1] != nullptr);
}

TEST_CASE("run_trials is reproducible and independent of the job count") {
  Pipeline p = make_pipeline(1.5, 6);
  EstimatorConfig ae = EstimatorConfig::defaults("ae");
  ae.hidden_dims = {8};
  ae.latent_dim = 2;
  ae.epochs = 6;
  EstimatorConfig ppca = EstimatorConfig::defaults("ppca");
  ppca.q = 2;

  EvaluationGrid serial = run_trials({ae, ppca}, p.train, p.val, p.test, p.groups, 2, 11, 1);
  EvaluationGrid parallel = run_trials({ae, ppca}, p.train, p.val, p.test, p.groups, 2, 11, 4);
  for (std::size_t e = 0; e < serial.cells.size(); ++e) {
    for (std::size_t g = 0; g < serial.cells[e].size(); ++g) {
      CHECK(serial.cells[e][g].trial_aucs == parallel.cells[e][g].trial_aucs);
    }
  }
}

TEST_CASE("a planted 3-sigma shift is detected by PPCA with AUC >= 0.95") {
  Pipeline p = make_pipeline(3.0, 8);
  EstimatorConfig ppca = EstimatorConfig::defaults("ppca");
  ppca.q = 3;
  EvaluationGrid grid = run_trials({ppca}, p.train, p.val, p.test, p.groups, 2, 3);
  CHECK(grid.cells[0][0].mean() >= 0.95);
}

TEST_CASE("score_distribution clips to the test percentile window") {
  Eigen::VectorXd test(101);
  for (int i = 0; i <= 100; ++i) test(i) = i;

  SUBCASE("bounds are the 5th and 95th percentiles of test scores") {
    auto dists = score_distribution("e", test, {}, 10);
    REQUIRE(dists.size() == 1);
    CHECK(dists[0].clip_lo == 5.0);
    CHECK(dists[0].clip_hi == 95.0);
    CHECK(dists[0].cohort == "test");
    int total = 0;
    for (int c : dists[0].counts) total += c;
    CHECK(total == 101);
  }
  SUBCASE("an identical cohort gets an identical histogram") {
    auto dists = score_distribution("e", test, {{"same", test}}, 12);
    REQUIRE(dists.size() == 2);
    CHECK(dists[1].counts == dists[0].counts);
    CHECK(dists[1].clip_lo == dists[0].clip_lo);
  }
  SUBCASE("a cohort far above the window lands entirely in the top bin") {
    Eigen::VectorXd far = Eigen::VectorXd::Constant(40, 1e6);
    auto dists = score_distribution("e", test, {{"far", far}}, 10);
    CHECK(dists[1].counts.back() == 40);
    for (std::size_t b = 0; b + 1 < dists[1].counts.size(); ++b) CHECK(dists[1].counts[b] == 0);
  }
}

TEST_CASE("graded shift curve rises from chance to near-perfect") {
  SyntheticSpec spec;
  spec.n_rows = 800;
  spec.n_continuous = 6;
  spec.latent_rank = 2;
  spec.shift = {1, 1, 0, 0, 0, 0};  // pattern scaled by each magnitude
  spec.seed = 12;
  EstimatorConfig ppca = EstimatorConfig::defaults("ppca");
  ppca.q = 3;
  GradedShiftCurve curve = graded_shift_curve({ppca}, spec, {0.0, 1.0, 3.0, 5.0}, {0.7, 0.15, 0.15, 2});
  REQUIRE(curve.auc.size() == 1);
  REQUIRE(curve.auc[0].size() == 4);
  CHECK(curve.auc[0][0] > 0.4);
  CHECK(curve.auc[0][0] < 0.6);
  CHECK(curve.auc[0][3] >= 0.99);
  for (std::size_t i = 1; i < 4; ++i) CHECK(curve.auc[0][i] >= curve.auc[0][i - 1] - 0.03);

  SUBCASE("magnitudes must be ascending from zero") {
    CHECK_THROWS_AS(graded_shift_curve({ppca}, spec, {1.0, 2.0}, {0.7, 0.15, 0.15, 2}), Error);
    CHECK_THROWS_AS(graded_shift_curve({ppca}, spec, {0.0, 2.0, 1.0}, {0.7, 0.15, 0.15, 2}), Error);
  }
}
