#include <doctest.h>

#include "oodtk/estimators/ppca.hpp"
#include "oracles.hpp"

using namespace oodtk;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
  return X;
}

EstimatorConfig ppca_config(int q) {
  EstimatorConfig c = EstimatorConfig::defaults("ppca");
  c.q = q;
  return c;
}

}  // namespace

TEST_CASE("exactly isotropic data gives W = 0 and sigma2 = lambda") {
  // four points whose sample covariance is (2c^2/3) I exactly
  const double c = 3.0;
  Eigen::MatrixXd X(4, 2);
  X << c, 0, -c, 0, 0, c, 0, -c;
  auto p = PpcaEstimator::closed_form(X, 1);
  const double lambda = 2.0 * c * c / 3.0;
  CHECK(p.sigma2 == doctest::Approx(lambda).epsilon(1e-12));
  CHECK(p.W.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(p.mu.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scored at the mean of isotropic standard-normal data: (d/2) ln 2 pi") {
  Eigen::MatrixXd X = random_matrix(4000, 2, 7);
  auto est = PpcaEstimator::fit(ppca_config(1), nullptr, X);
  Eigen::MatrixXd probe = est->params().mu.transpose();
  const double score = est->score(probe)(0);
  // negated peak log-density of an approximately standard normal fit
  CHECK(score == doctest::Approx(std::log(2.0 * M_PI)).epsilon(0.05));
}

TEST_CASE("q = d reproduces the full-covariance Gaussian oracle per row") {
  const int d = 4;
  Eigen::MatrixXd X = random_matrix(300, d, 11);
  // correlate the columns a little
  X.col(1) = (0.6 * X.col(1) + 0.4 * X.col(0)).eval();
  auto p = PpcaEstimator::closed_form(X, d);
  auto est = PpcaEstimator::from_params(ppca_config(2), nullptr, d, p);

  const Eigen::VectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(X.rows() - 1);
  const Eigen::VectorXd expected = oracles::gaussian_loglik(X, mean, cov);
  const Eigen::VectorXd got = est->log_likelihood(X);
  CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("training log-likelihood is non-decreasing in q") {
  const int d = 5;
  Eigen::MatrixXd X = random_matrix(240, d, 3);
  X.col(2) = (0.2 * X.col(2) + 0.9 * X.col(4)).eval();
  double prev = -std::numeric_limits<double>::infinity();
  for (int q = 1; q <= d; ++q) {
    auto p = PpcaEstimator::closed_form(X, q);
    auto est = PpcaEstimator::from_params(ppca_config(1), nullptr, d, p);
    const double mean_ll = est->log_likelihood(X).mean();
    CHECK(mean_ll >= prev - 1e-9);
    prev = mean_ll;
  }
}

TEST_CASE("q = d-1 likelihood is bounded by the full-covariance Gaussian") {
  const int d = 4;
  Eigen::MatrixXd X = random_matrix(500, d, 23);
  auto p = PpcaEstimator::closed_form(X, d - 1);
  auto est = PpcaEstimator::from_params(ppca_config(d - 1), nullptr, d, p);
  const Eigen::VectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(X.rows() - 1);
  CHECK(est->log_likelihood(X).mean() <= oracles::gaussian_loglik(X, mean, cov).mean() + 1e-9);
}

TEST_CASE("exactly collinear 2-d data stays finite through the sigma2 floor") {
  Eigen::MatrixXd X(50, 2);
  for (int i = 0; i < 50; ++i) {
    X(i, 0) = 0.1 * i;
    X(i, 1) = 0.2 * i;  // y = 2x exactly
  }
  auto p = PpcaEstimator::closed_form(X, 1);
  CHECK(p.sigma2 > 0.0);
  auto est = PpcaEstimator::from_params(ppca_config(1), nullptr, 2, p);
  CHECK(est->score(X).allFinite());
}

TEST_CASE("the default q = 19 fits 56-dimensional data") {
  Eigen::MatrixXd X = random_matrix(120, 56, 77);
  auto est = PpcaEstimator::fit(EstimatorConfig::defaults("ppca"), nullptr, X);
  CHECK(est->config().q == 19);
  CHECK(est->score(X.topRows(5)).allFinite());
}

TEST_CASE("fit rejects q >= d and tiny training sets") {
  Eigen::MatrixXd X = random_matrix(10, 3, 1);
  CHECK_THROWS_AS(PpcaEstimator::fit(ppca_config(3), nullptr, X), Error);
  CHECK_THROWS_AS(PpcaEstimator::fit(ppca_config(5), nullptr, X), Error);
  CHECK_THROWS_AS(PpcaEstimator::fit(ppca_config(1), nullptr, X.topRows(1)), Error);
}

TEST_CASE("serialization round trip preserves log-likelihood") {
  Eigen::MatrixXd X = random_matrix(100, 4, 9);
  auto est = PpcaEstimator::fit(ppca_config(2), nullptr, X);
  auto back = PpcaEstimator::from_json(est->config(), nullptr, est->to_json().at("params"));
  Eigen::MatrixXd probe = random_matrix(10, 4, 10);
  CHECK((back->score(probe) - est->score(probe)).cwiseAbs().maxCoeff() < 1e-12);
}
