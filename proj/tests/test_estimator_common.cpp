#include <doctest.h>

#include "oodtk/estimators/factory.hpp"
#include "oodtk/synthetic.hpp"
#include "oodtk/split.hpp"

using namespace oodtk;

namespace {

/// Small configurations of all five kinds, sized for unit-test runtimes.
std::vector<EstimatorConfig> small_configs(std::uint64_t seed) {
  EstimatorConfig ppca = EstimatorConfig::defaults("ppca");
  ppca.q = 3;
  EstimatorConfig lof = EstimatorConfig::defaults("lof");
  EstimatorConfig ae = EstimatorConfig::defaults("ae");
  ae.hidden_dims = {16};
  ae.latent_dim = 3;
  ae.epochs = 12;
  EstimatorConfig vae = EstimatorConfig::defaults("vae");
  vae.hidden_dims = {16};
  vae.latent_dim = 3;
  vae.epochs = 12;
  vae.beta_warmup_epochs = 4;
  EstimatorConfig maf = EstimatorConfig::defaults("maf");
  maf.n_layers = 3;
  maf.hidden_units = 16;
  maf.epochs = 12;
  std::vector<EstimatorConfig> configs{ppca, lof, ae, vae, maf};
  for (auto& c : configs) c.seed = seed;
  return configs;
}

}  // namespace

TEST_CASE("defaults carry the shipped hyperparameters") {
  CHECK(EstimatorConfig::defaults("ppca").q == 19);
  CHECK(EstimatorConfig::defaults("lof").k == 5);
  const auto ae = EstimatorConfig::defaults("ae");
  CHECK(ae.hidden_dims == std::vector<int>{75});
  CHECK(ae.latent_dim == 20);
  CHECK(ae.lr == 0.007);
  const auto vae = EstimatorConfig::defaults("vae");
  CHECK(vae.hidden_dims == std::vector<int>{25, 25, 25});
  CHECK(vae.latent_dim == 10);
  CHECK(vae.lr == 0.001);
  const auto maf = EstimatorConfig::defaults("maf");
  CHECK(maf.n_layers == 20);
  CHECK(maf.hidden_units == 256);
  CHECK(maf.lr == 0.001);
  CHECK(maf.batch_norm);
  CHECK(maf.epochs == 30);
  CHECK(maf.batch_size == 64);
  CHECK(maf.patience == 5);
  CHECK_THROWS_AS(EstimatorConfig::defaults("due"), Error);
}

TEST_CASE("config json round trip") {
  for (const auto& c : small_configs(9)) {
    EstimatorConfig back = EstimatorConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
  }
}

TEST_CASE("orientation: far-away points outscore held-out in-distribution points") {
  SyntheticSpec spec;
  spec.n_rows = 700;
  spec.n_continuous = 5;
  spec.categorical_levels = {};
  spec.latent_rank = 2;
  spec.shift = std::vector<double>(5, 0.0);
  spec.seed = 42;
  auto [data, _] = generate_synthetic(spec);
  Split s = split(data, {0.7, 0.15, 0.15, 1});
  auto enc = std::make_shared<const Encoding>(fit_encoding(s.train));
  EncodedMatrix train = encode(s.train, enc);
  EncodedMatrix val = encode(s.val, enc);
  EncodedMatrix test = encode(s.test, enc);

  // held-out in-distribution rows vs points 5 sigma out along every axis
  Eigen::MatrixXd far = Eigen::MatrixXd::Constant(40, static_cast<Eigen::Index>(enc->dim()), 5.0);
  for (const auto& config : small_configs(11)) {
    auto est = fit_estimator(config, train, val);
    const double mean_in = est->score(test).mean();
    const double mean_far = est->score(far).mean();
    INFO(config.kind);
    CHECK(mean_far > mean_in);
  }
}

TEST_CASE("fit rejects invalid hyperparameters for the data") {
  SyntheticSpec spec;
  spec.n_rows = 30;
  spec.n_continuous = 3;
  spec.shift = {0, 0, 0};
  spec.seed = 2;
  auto [data, _] = generate_synthetic(spec);
  auto enc = std::make_shared<const Encoding>(fit_encoding(data));
  EncodedMatrix X = encode(data, enc);
  EncodedMatrix empty{Eigen::MatrixXd(), enc, {}};

  EstimatorConfig ppca = EstimatorConfig::defaults("ppca");
  ppca.q = 3;  // q == d
  CHECK_THROWS_AS(fit_estimator(ppca, X, empty), Error);

  EstimatorConfig lof = EstimatorConfig::defaults("lof");
  lof.k = 30;  // k == n
  CHECK_THROWS_AS(fit_estimator(lof, X, empty), Error);
}

TEST_CASE("every kind serializes through the factory and scores identically") {
  SyntheticSpec spec;
  spec.n_rows = 250;
  spec.n_continuous = 4;
  spec.categorical_levels = {2};
  spec.latent_rank = 2;
  spec.shift = std::vector<double>(4, 0.0);
  spec.seed = 77;
  auto [data, shifted] = generate_synthetic(spec);
  Split s = split(data, {0.7, 0.15, 0.15, 3});
  auto enc = std::make_shared<const Encoding>(fit_encoding(s.train));
  EncodedMatrix train = encode(s.train, enc);
  EncodedMatrix val = encode(s.val, enc);
  EncodedMatrix probe = encode(shifted, enc);

  for (const auto& config : small_configs(21)) {
    auto est = fit_estimator(config, train, val);
    auto back = load_estimator(est->to_json());
    INFO(config.kind);
    CHECK(back->score(probe) == est->score(probe));
    CHECK(back->metric_label() == est->metric_label());
  }
}
