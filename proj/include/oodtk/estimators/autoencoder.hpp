#pragma once

#include <memory>
#include <vector>

#include "oodtk/estimators/estimator.hpp"
#include "oodtk/nn/adam.hpp"

namespace oodtk {

namespace detail {

/// Symmetric autoencoder stack: ReLU hidden layers, linear latent and output.
inline std::vector<nn::LayerSpec> ae_specs(int dim, const std::vector<int>& hidden, int latent) {
  std::vector<nn::LayerSpec> specs;
  int prev = dim;
  for (int h : hidden) {
    specs.push_back(nn::LayerSpec::dense(prev, h, nn::Activation::Relu));
    prev = h;
  }
  specs.push_back(nn::LayerSpec::dense(prev, latent));
  prev = latent;
  for (auto it = hidden.rbegin(); it != hidden.rend(); ++it) {
    specs.push_back(nn::LayerSpec::dense(prev, *it, nn::Activation::Relu));
    prev = *it;
  }
  specs.push_back(nn::LayerSpec::dense(prev, dim));
  return specs;
}

inline Eigen::VectorXd row_mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).array().square().rowwise().mean().matrix();
}

}  // namespace detail

/// Plain autoencoder scored by per-row mean squared reconstruction error.
class AeEstimator final : public FittedEstimator {
 public:
  static std::unique_ptr<AeEstimator> fit(EstimatorConfig config,
                                          std::shared_ptr<const Encoding> enc,
                                          const Eigen::MatrixXd& train,
                                          const Eigen::MatrixXd& val) {
    config.validate();
    const int dim = static_cast<int>(train.cols());
    detail::require(train.rows() >= 1, "ae: empty training set");
    nn::Network net(detail::ae_specs(dim, config.hidden_dims, config.latent_dim),
                    mix_seed(config.seed, 0xA001));
    train_mse(net, config, train, val);
    return std::unique_ptr<AeEstimator>(
        new AeEstimator(std::move(config), std::move(enc), dim, std::move(net)));
  }

  std::string metric_label() const override { return "reconstr_err"; }

  Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& X) const { return net_.eval(X); }

  static std::unique_ptr<AeEstimator> from_json(EstimatorConfig config,
                                                std::shared_ptr<const Encoding> enc,
                                                const nlohmann::json& j) {
    nn::Network net = nn::Network::from_json(j.at("network"));
    return std::unique_ptr<AeEstimator>(
        new AeEstimator(std::move(config), std::move(enc), net.input_dim(), std::move(net)));
  }

 protected:
  Eigen::VectorXd score_rows(const Eigen::MatrixXd& X) const override {
    return detail::row_mse(net_.eval(X), X);
  }

  nlohmann::json params_json() const override {
    return nlohmann::json{{"network", net_.to_json()}};
  }

 private:
  AeEstimator(EstimatorConfig config, std::shared_ptr<const Encoding> enc, int dim,
              nn::Network net)
      : FittedEstimator(std::move(config), std::move(enc), dim), net_(std::move(net)) {}

  static void train_mse(nn::Network& net, const EstimatorConfig& config,
                        const Eigen::MatrixXd& train, const Eigen::MatrixXd& val) {
    Rng rng(mix_seed(config.seed, 0xA002));
    nn::AdamState adam(config.lr);
    detail::EarlyStopper stopper(config.patience, {&net});
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      for (const auto& batch_rows :
           detail::make_batches(static_cast<std::size_t>(train.rows()),
                                static_cast<std::size_t>(config.batch_size), rng)) {
        const Eigen::MatrixXd batch = detail::gather_rows(train, batch_rows);
        nn::Tape tape;
        auto fp = net.forward(tape, batch, nn::Mode::Train);
        nn::Var loss = tape.mean_all(tape.square(tape.sub(fp.output, tape.leaf(batch))));
        detail::check_finite_loss(tape.value(loss)(0, 0), "ae", epoch);
        tape.backward(loss);
        adam.step(net, nn::collect_gradients(tape, fp));
      }
      if (val.rows() > 0) {
        const double val_loss = detail::row_mse(net.eval(val), val).mean();
        detail::check_finite_loss(val_loss, "ae", epoch);
        if (stopper.update(val_loss)) break;
      }
    }
    if (val.rows() > 0) stopper.restore();
  }

  nn::Network net_;
};

struct VaeLossParts {
  double loss = 0;
  double recon = 0;
  double kl = 0;
};

struct VaeLossGraph {
  nn::Var loss, recon, kl;
  nn::ForwardPass enc_fp, dec_fp;
};

/// ELBO-style objective: mean squared reconstruction of one reparameterized
/// sample plus beta times the closed-form diagonal-Gaussian KL to N(0, I).
/// The encoder emits [mu, log-variance]; log-variance is clamped to [-7, 7].
inline VaeLossGraph vae_loss_graph(nn::Tape& tape, nn::Network& encoder, nn::Network& decoder,
                                   const Eigen::MatrixXd& batch, double beta,
                                   const Eigen::MatrixXd& eps) {
  detail::require(beta >= 0.0 && beta <= 1.0, "vae_loss: beta must be in [0,1]");
  const int latent = decoder.input_dim();
  detail::require(encoder.output_dim() == 2 * latent,
                  "vae_loss: encoder must emit mean and log-variance per latent dim");
  detail::require(eps.rows() == batch.rows() && eps.cols() == latent,
                  "vae_loss: eps shape must be batch x latent");

  VaeLossGraph g;
  nn::Var x = tape.leaf(batch);
  g.enc_fp = encoder.forward_var(tape, x, nn::Mode::Train);
  nn::Var mu = tape.slice_cols(g.enc_fp.output, 0, latent);
  nn::Var logvar = tape.clamp(tape.slice_cols(g.enc_fp.output, latent, latent), -7.0, 7.0);
  nn::Var sigma = tape.exp(tape.scale(logvar, 0.5));
  nn::Var z = tape.add(mu, tape.mul(sigma, tape.leaf(eps)));
  g.dec_fp = decoder.forward_var(tape, z, nn::Mode::Train);

  g.recon = tape.mean_all(tape.square(tape.sub(g.dec_fp.output, x)));
  // KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - log sigma^2)
  nn::Var kl_terms = tape.sub(tape.add(tape.square(mu), tape.exp(logvar)),
                              tape.add_const(logvar, 1.0));
  g.kl = tape.mean_all(tape.scale(tape.row_sum(kl_terms), 0.5));
  g.loss = tape.add(g.recon, tape.scale(g.kl, beta));
  return g;
}

inline VaeLossParts vae_loss(nn::Network& encoder, nn::Network& decoder,
                             const Eigen::MatrixXd& batch, double beta,
                             const Eigen::MatrixXd& eps) {
  nn::Tape tape;
  VaeLossGraph g = vae_loss_graph(tape, encoder, decoder, batch, beta, eps);
  return VaeLossParts{tape.value(g.loss)(0, 0), tape.value(g.recon)(0, 0),
                      tape.value(g.kl)(0, 0)};
}

/// Variational autoencoder with KL warm-up. Scoring is deterministic: the
/// reconstruction goes through the encoder mean, never a sampled latent.
class VaeEstimator final : public FittedEstimator {
 public:
  static std::unique_ptr<VaeEstimator> fit(EstimatorConfig config,
                                           std::shared_ptr<const Encoding> enc,
                                           const Eigen::MatrixXd& train,
                                           const Eigen::MatrixXd& val) {
    config.validate();
    const int dim = static_cast<int>(train.cols());
    detail::require(train.rows() >= 1, "vae: empty training set");
    nn::Network encoder(encoder_specs(dim, config), mix_seed(config.seed, 0xB001));
    nn::Network decoder(decoder_specs(dim, config), mix_seed(config.seed, 0xB002));
    train_elbo(encoder, decoder, config, train, val);
    return std::unique_ptr<VaeEstimator>(new VaeEstimator(
        std::move(config), std::move(enc), dim, std::move(encoder), std::move(decoder)));
  }

  std::string metric_label() const override { return "reconstr_err"; }

  /// Encoder mean for a batch (the deterministic latent used at score time).
  Eigen::MatrixXd latent_mean(const Eigen::MatrixXd& X) const {
    return enc_.eval(X).leftCols(dec_.input_dim());
  }

  static std::unique_ptr<VaeEstimator> from_json(EstimatorConfig config,
                                                 std::shared_ptr<const Encoding> enc,
                                                 const nlohmann::json& j) {
    nn::Network encoder = nn::Network::from_json(j.at("encoder"));
    nn::Network decoder = nn::Network::from_json(j.at("decoder"));
    return std::unique_ptr<VaeEstimator>(new VaeEstimator(std::move(config), std::move(enc),
                                                          encoder.input_dim(), std::move(encoder),
                                                          std::move(decoder)));
  }

 protected:
  Eigen::VectorXd score_rows(const Eigen::MatrixXd& X) const override {
    return detail::row_mse(dec_.eval(latent_mean(X)), X);
  }

  nlohmann::json params_json() const override {
    return nlohmann::json{{"encoder", enc_.to_json()}, {"decoder", dec_.to_json()}};
  }

 private:
  VaeEstimator(EstimatorConfig config, std::shared_ptr<const Encoding> enc, int dim,
               nn::Network encoder, nn::Network decoder)
      : FittedEstimator(std::move(config), std::move(enc), dim),
        enc_(std::move(encoder)),
        dec_(std::move(decoder)) {}

  static std::vector<nn::LayerSpec> encoder_specs(int dim, const EstimatorConfig& c) {
    std::vector<nn::LayerSpec> specs;
    int prev = dim;
    for (int h : c.hidden_dims) {
      specs.push_back(nn::LayerSpec::dense(prev, h, nn::Activation::Relu));
      prev = h;
    }
    specs.push_back(nn::LayerSpec::dense(prev, 2 * c.latent_dim));
    return specs;
  }

  static std::vector<nn::LayerSpec> decoder_specs(int dim, const EstimatorConfig& c) {
    std::vector<nn::LayerSpec> specs;
    int prev = c.latent_dim;
    for (auto it = c.hidden_dims.rbegin(); it != c.hidden_dims.rend(); ++it) {
      specs.push_back(nn::LayerSpec::dense(prev, *it, nn::Activation::Relu));
      prev = *it;
    }
    specs.push_back(nn::LayerSpec::dense(prev, dim));
    return specs;
  }

  static void train_elbo(nn::Network& encoder, nn::Network& decoder,
                         const EstimatorConfig& config, const Eigen::MatrixXd& train,
                         const Eigen::MatrixXd& val) {
    Rng rng(mix_seed(config.seed, 0xB003));
    std::vector<nn::Mat*> params = encoder.params();
    for (auto* p : decoder.params()) params.push_back(p);
    nn::AdamState adam(config.lr);
    detail::EarlyStopper stopper(config.patience, {&encoder, &decoder});
    const int latent = decoder.input_dim();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      const double beta = beta_schedule(epoch, config.beta_warmup_epochs);
      for (const auto& batch_rows :
           detail::make_batches(static_cast<std::size_t>(train.rows()),
                                static_cast<std::size_t>(config.batch_size), rng)) {
        const Eigen::MatrixXd batch = detail::gather_rows(train, batch_rows);
        Eigen::MatrixXd eps(batch.rows(), latent);
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
        nn::Tape tape;
        VaeLossGraph g = vae_loss_graph(tape, encoder, decoder, batch, beta, eps);
        detail::check_finite_loss(tape.value(g.loss)(0, 0), "vae", epoch);
        tape.backward(g.loss);
        std::vector<nn::Mat> grads = nn::collect_gradients(tape, g.enc_fp);
        for (auto& g2 : nn::collect_gradients(tape, g.dec_fp)) grads.push_back(std::move(g2));
        adam.step(params, grads);
        encoder.note_mutation();
        decoder.note_mutation();
      }
      if (val.rows() > 0) {
        const double val_loss = validation_loss(encoder, decoder, val);
        detail::check_finite_loss(val_loss, "vae", epoch);
        if (stopper.update(val_loss)) break;
      }
    }
    if (val.rows() > 0) stopper.restore();
  }

  /// Deterministic validation objective: reconstruction through the encoder
  /// mean plus the full-weight KL term.
  static double validation_loss(const nn::Network& encoder, const nn::Network& decoder,
                                const Eigen::MatrixXd& val) {
    const int latent = decoder.input_dim();
    const Eigen::MatrixXd enc_out = encoder.eval(val);
    const Eigen::MatrixXd mu = enc_out.leftCols(latent);
    const Eigen::MatrixXd logvar = enc_out.rightCols(latent).cwiseMax(-7.0).cwiseMin(7.0);
    const Eigen::MatrixXd recon = decoder.eval(mu);
    const double mse = (recon - val).array().square().mean();
    const double kl = 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array())
                                .rowwise()
                                .sum()
                                .mean();
    return mse + kl;
  }

  nn::Network enc_;
  nn::Network dec_;
};

}  // namespace oodtk
