#include <doctest.h>

#include "oodtk/estimators/autoencoder.hpp"
#include "oodtk/estimators/factory.hpp"

using namespace oodtk;
using nn::Mat;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
  return X;
}

EstimatorConfig small_ae() {
  EstimatorConfig c = EstimatorConfig::defaults("ae");
  c.hidden_dims = {12};
  c.latent_dim = 3;
  c.epochs = 12;
  c.batch_size = 32;
  c.seed = 5;
  return c;
}

EstimatorConfig small_vae() {
  EstimatorConfig c = EstimatorConfig::defaults("vae");
  c.hidden_dims = {12};
  c.latent_dim = 3;
  c.epochs = 12;
  c.batch_size = 32;
  c.beta_warmup_epochs = 4;
  c.seed = 5;
  return c;
}

/// Encoder that always emits the given mean and log-variance rows.
nn::Network constant_encoder(int dim, const Eigen::RowVectorXd& mu,
                             const Eigen::RowVectorXd& logvar) {
  const int latent = static_cast<int>(mu.size());
  nn::Network enc({nn::LayerSpec::dense(dim, 2 * latent)}, 0);
  enc.layer(0).W.setZero();
  enc.layer(0).b.leftCols(latent) = mu;
  enc.layer(0).b.rightCols(latent) = logvar;
  return enc;
}

}  // namespace

TEST_CASE("beta schedule ramps linearly and saturates") {
  CHECK(beta_schedule(0, 10) == 0.0);
  CHECK(beta_schedule(5, 10) == 0.5);
  CHECK(beta_schedule(10, 10) == 1.0);
  CHECK(beta_schedule(25, 10) == 1.0);
  CHECK(beta_schedule(0, 0) == 1.0);
  CHECK(beta_schedule(7, 0) == 1.0);
  CHECK_THROWS_AS(beta_schedule(-1, 10), Error);
}

TEST_CASE("a perfect reconstruction scores zero") {
  // identity network wrapped as an AE estimator through its blob format
  nn::Network identity({nn::LayerSpec::dense(3, 3)}, 0);
  identity.layer(0).W = Mat::Identity(3, 3);
  EstimatorConfig config = small_ae();
  nlohmann::json params{{"network", identity.to_json()}};
  auto est = AeEstimator::from_json(config, nullptr, params);
  Eigen::MatrixXd X = random_matrix(6, 3, 2);
  CHECK(est->score(X).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("vae_loss with beta 0 is the plain reconstruction error") {
  const int dim = 4, latent = 2;
  nn::Network enc({nn::LayerSpec::dense(dim, 2 * latent)}, 3);
  nn::Network dec({nn::LayerSpec::dense(latent, dim)}, 4);
  Eigen::MatrixXd batch = random_matrix(8, dim, 5);
  Eigen::MatrixXd eps = random_matrix(8, latent, 6);
  auto parts = vae_loss(enc, dec, batch, 0.0, eps);
  CHECK(parts.loss == doctest::Approx(parts.recon).epsilon(1e-12));
  // and the reconstruction really is the stochastic pass
  auto parts2 = vae_loss(enc, dec, batch, 0.0, Eigen::MatrixXd::Zero(8, latent));
  CHECK(parts.recon != parts2.recon);
}

TEST_CASE("closed-form KL values") {
  const int dim = 3;
  Eigen::MatrixXd batch = random_matrix(5, dim, 7);
  nn::Network dec({nn::LayerSpec::dense(1, dim)}, 1);
  Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(5, 1);

  SUBCASE("mu = 0, logvar = 0 gives KL = 0") {
    nn::Network enc = constant_encoder(dim, Eigen::RowVectorXd::Zero(1),
                                       Eigen::RowVectorXd::Zero(1));
    auto parts = vae_loss(enc, dec, batch, 1.0, eps);
    CHECK(parts.kl == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("mu = 1, logvar = 0 gives KL = 0.5") {
    nn::Network enc = constant_encoder(dim, Eigen::RowVectorXd::Ones(1),
                                       Eigen::RowVectorXd::Zero(1));
    auto parts = vae_loss(enc, dec, batch, 1.0, eps);
    CHECK(parts.kl == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(parts.loss == doctest::Approx(parts.recon + 0.5).epsilon(1e-12));
  }
}

TEST_CASE("vae_loss validates beta and shapes") {
  const int dim = 3, latent = 2;
  nn::Network enc({nn::LayerSpec::dense(dim, 2 * latent)}, 1);
  nn::Network dec({nn::LayerSpec::dense(latent, dim)}, 2);
  Eigen::MatrixXd batch = random_matrix(4, dim, 1);
  CHECK_THROWS_AS(vae_loss(enc, dec, batch, 1.5, Eigen::MatrixXd::Zero(4, latent)), Error);
  CHECK_THROWS_AS(vae_loss(enc, dec, batch, 0.5, Eigen::MatrixXd::Zero(3, latent)), Error);
}

TEST_CASE("AE and VAE training is deterministic per seed") {
  Eigen::MatrixXd train = random_matrix(160, 5, 1);
  Eigen::MatrixXd val = random_matrix(40, 5, 2);
  Eigen::MatrixXd probe = random_matrix(10, 5, 3);

  auto enc = std::shared_ptr<const Encoding>();
  auto a1 = AeEstimator::fit(small_ae(), enc, train, val);
  auto a2 = AeEstimator::fit(small_ae(), enc, train, val);
  CHECK(a1->score(probe) == a2->score(probe));

  auto v1 = VaeEstimator::fit(small_vae(), enc, train, val);
  auto v2 = VaeEstimator::fit(small_vae(), enc, train, val);
  CHECK(v1->score(probe) == v2->score(probe));

  EstimatorConfig other = small_ae();
  other.seed = 6;
  auto a3 = AeEstimator::fit(other, enc, train, val);
  CHECK(a1->score(probe) != a3->score(probe));
}

TEST_CASE("VAE scoring is deterministic (encoder mean, no sampling)") {
  Eigen::MatrixXd train = random_matrix(120, 4, 4);
  auto est = VaeEstimator::fit(small_vae(), nullptr, train, Eigen::MatrixXd());
  Eigen::MatrixXd row = random_matrix(1, 4, 9);
  const double s1 = est->score(row)(0);
  const double s2 = est->score(row)(0);
  CHECK(s1 == s2);
  // batch scoring equals row scoring bit for bit
  Eigen::MatrixXd rows = random_matrix(7, 4, 10);
  const Eigen::VectorXd batch_scores = est->score(rows);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    CHECK(batch_scores(i) == est->score(Eigen::MatrixXd(rows.row(i)))(0));
  }
}

TEST_CASE("training on reconstructable data reduces the score") {
  // low-rank data an AE with a 2-wide bottleneck can capture
  Rng rng(13);
  Eigen::MatrixXd factors = random_matrix(200, 2, 14);
  Eigen::MatrixXd mix = random_matrix(2, 6, 15);
  Eigen::MatrixXd train = factors * mix;
  EstimatorConfig c = small_ae();
  c.latent_dim = 2;
  c.epochs = 40;
  auto est = AeEstimator::fit(c, nullptr, train, Eigen::MatrixXd());
  // reconstruction error on training-like data falls well below the raw scale
  const double mean_score = est->score(train).mean();
  const double data_scale = train.array().square().mean();
  CHECK(mean_score < 0.2 * data_scale);
}

TEST_CASE("exploding training reports a non-finite loss with its epoch") {
  Eigen::MatrixXd train = random_matrix(64, 3, 21);
  EstimatorConfig c = small_ae();
  c.lr = 1e150;
  c.epochs = 5;
  try {
    AeEstimator::fit(c, nullptr, train, Eigen::MatrixXd());
    FAIL("expected a non-finite loss error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("non-finite loss at epoch") != std::string::npos);
  }
}

TEST_CASE("early stopper restores the best snapshot") {
  nn::Network net({nn::LayerSpec::dense(2, 2)}, 3);
  detail::EarlyStopper stopper(1, {&net});
  const Eigen::VectorXd initial = net.flat_params();
  CHECK_FALSE(stopper.update(1.0));  // best so far, snapshot taken
  net.set_flat_params(initial.array() + 10.0);
  CHECK_FALSE(stopper.update(2.0));  // worse, patience 1 not exceeded yet
  net.set_flat_params(initial.array() + 20.0);
  CHECK(stopper.update(3.0));  // second miss, stop
  stopper.restore();
  CHECK(net.flat_params() == initial);
}

TEST_CASE("early stopper restores batch-norm running statistics too") {
  nn::Network net({nn::LayerSpec::batchnorm(2)}, 0);
  auto train_batch = [&](double offset) {
    Mat batch = Mat::Random(16, 2);
    batch.array() += offset;
    nn::Tape t;
    net.forward(t, batch, nn::Mode::Train);
  };
  train_batch(0.0);
  const std::vector<Mat> at_best = net.running_stats();
  detail::EarlyStopper stopper(0, {&net});
  stopper.update(1.0);
  // running stats drift far away after the snapshot
  for (int i = 0; i < 20; ++i) train_batch(50.0);
  CHECK(net.running_stats()[0] != at_best[0]);
  stopper.restore();
  CHECK(net.running_stats()[0] == at_best[0]);
  CHECK(net.running_stats()[1] == at_best[1]);
}

TEST_CASE("estimator blob round trip through the factory") {
  Eigen::MatrixXd train = random_matrix(100, 4, 30);
  FeatureSchema schema({{"a", FeatureKind::Continuous, {}},
                        {"b", FeatureKind::Continuous, {}},
                        {"c", FeatureKind::Continuous, {}},
                        {"d", FeatureKind::Continuous, {}}});
  DatasetBuilder b(schema);
  for (Eigen::Index i = 0; i < train.rows(); ++i) {
    b.add_row(std::to_string(i), {train(i, 0), train(i, 1), train(i, 2), train(i, 3)});
  }
  Dataset ds = b.build();
  auto enc = std::make_shared<const Encoding>(fit_encoding(ds));
  EncodedMatrix X = encode(ds, enc);

  auto est = fit_estimator(small_vae(), X, EncodedMatrix{Eigen::MatrixXd(), enc, {}});
  auto back = load_estimator(est->to_json());
  Eigen::MatrixXd probe = random_matrix(5, 4, 31);
  CHECK(back->score(probe) == est->score(probe));
  CHECK(back->kind() == "vae");
  CHECK(back->encoding() != nullptr);
  CHECK(back->encoding()->dim() == 4);
}
