#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "oodtk/estimators/estimator.hpp"
#include "oodtk/nn/adam.hpp"
#include "oodtk/nn/made.hpp"

namespace oodtk {

/// Masked autoregressive flow: a stack of (masked affine layer, optional batch
/// normalization) blocks separated by reverse permutations, mapping data to a
/// standard normal base. Each affine layer computes
/// u_i = (x_i - m_i(x_<i)) * exp(-a_i(x_<i)) and contributes -sum_i a_i to the
/// per-row log-determinant; batch norm contributes its own closed form.
/// Conditioner log-scales are clamped to [-7, 7]. Conditioner output layers
/// start at zero, so an untrained flow without batch norm is the identity.
class MafEstimator final : public FittedEstimator {
 public:
  static std::unique_ptr<MafEstimator> fit(EstimatorConfig config,
                                           std::shared_ptr<const Encoding> enc,
                                           const Eigen::MatrixXd& train,
                                           const Eigen::MatrixXd& val) {
    auto est = untrained(std::move(config), std::move(enc), static_cast<int>(train.cols()));
    detail::require(train.rows() >= 2, "maf: need at least 2 training rows");
    est->train_flow(train, val);
    return est;
  }

  static std::unique_ptr<MafEstimator> untrained(EstimatorConfig config,
                                                 std::shared_ptr<const Encoding> enc, int dim) {
    config.validate();
    return std::unique_ptr<MafEstimator>(new MafEstimator(std::move(config), std::move(enc), dim));
  }

  std::string metric_label() const override { return "log_prob"; }

  /// Exact log-density in eval mode (batch norm frozen to running statistics).
  Eigen::VectorXd log_prob(const Eigen::MatrixXd& X) const {
    detail::require(X.cols() == dim_, "maf: input width mismatch");
    Eigen::MatrixXd u = X;
    Eigen::VectorXd logdet = Eigen::VectorXd::Zero(X.rows());
    for (int l = 0; l < config_.n_layers; ++l) {
      const Eigen::MatrixXd cond = conditioners_[static_cast<std::size_t>(l)].eval(u);
      const Eigen::MatrixXd m = cond.leftCols(dim_);
      const Eigen::MatrixXd a = cond.rightCols(dim_).cwiseMax(-clamp_).cwiseMin(clamp_);
      u = (u - m).cwiseProduct((-a).array().exp().matrix());
      logdet -= a.rowwise().sum();
      if (config_.batch_norm) {
        const auto& bn = bns_[static_cast<std::size_t>(l)];
        logdet.array() += bn_logdet_frozen(bn);
        u = bn.eval(u);
      }
      u = u.rowwise().reverse().eval();
    }
    const double d = static_cast<double>(dim_);
    return (logdet.array() - 0.5 * u.rowwise().squaredNorm().array() -
            0.5 * d * std::log(2.0 * M_PI))
        .matrix();
  }

  /// Data -> base-space transform in eval mode.
  Eigen::MatrixXd transform(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd u = X;
    for (int l = 0; l < config_.n_layers; ++l) {
      const Eigen::MatrixXd cond = conditioners_[static_cast<std::size_t>(l)].eval(u);
      const Eigen::MatrixXd m = cond.leftCols(dim_);
      const Eigen::MatrixXd a = cond.rightCols(dim_).cwiseMax(-clamp_).cwiseMin(clamp_);
      u = (u - m).cwiseProduct((-a).array().exp().matrix());
      if (config_.batch_norm) u = bns_[static_cast<std::size_t>(l)].eval(u);
      u = u.rowwise().reverse().eval();
    }
    return u;
  }

  /// Base-space -> data inverse; per layer the autoregressive structure is
  /// unrolled one coordinate at a time.
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& U) const {
    Eigen::MatrixXd x = U;
    for (int l = config_.n_layers - 1; l >= 0; --l) {
      x = x.rowwise().reverse().eval();
      if (config_.batch_norm) {
        const nn::Layer& bn = bns_[static_cast<std::size_t>(l)].layer(0);
        const double eps = bns_[static_cast<std::size_t>(l)].bn_eps();
        for (int j = 0; j < dim_; ++j) {
          const double gamma = bn.gamma(0, j);
          detail::require(std::abs(gamma) > 1e-12, "maf: batch-norm scale collapsed to zero");
          x.col(j) = ((x.col(j).array() - bn.beta(0, j)) / gamma) *
                         std::sqrt(bn.running_var(0, j) + eps) +
                     bn.running_mean(0, j);
        }
      }
      const Eigen::MatrixXd u_layer = x;
      Eigen::MatrixXd rec = Eigen::MatrixXd::Zero(x.rows(), x.cols());
      for (int i = 0; i < dim_; ++i) {
        const Eigen::MatrixXd cond = conditioners_[static_cast<std::size_t>(l)].eval(rec);
        const Eigen::ArrayXd a =
            cond.col(dim_ + i).array().max(-clamp_).min(clamp_);
        rec.col(i) = (u_layer.col(i).array() * a.exp() + cond.col(i).array()).matrix();
      }
      x = rec;
    }
    return x;
  }

  static std::unique_ptr<MafEstimator> from_json(EstimatorConfig config,
                                                 std::shared_ptr<const Encoding> enc,
                                                 const nlohmann::json& j) {
    const int dim = j.at("dim").get<int>();
    auto est = std::unique_ptr<MafEstimator>(new MafEstimator(std::move(config), std::move(enc),
                                                              dim, /*build_networks=*/false));
    for (const auto& nj : j.at("conditioners")) {
      est->conditioners_.push_back(nn::Network::from_json(nj));
    }
    for (const auto& nj : j.at("batch_norms")) {
      est->bns_.push_back(nn::Network::from_json(nj));
    }
    detail::require(static_cast<int>(est->conditioners_.size()) == est->config_.n_layers,
                    "maf: conditioner count mismatch in blob");
    return est;
  }

 protected:
  Eigen::VectorXd score_rows(const Eigen::MatrixXd& X) const override { return -log_prob(X); }

  nlohmann::json params_json() const override {
    nlohmann::json j;
    j["dim"] = dim_;
    nlohmann::json conds = nlohmann::json::array();
    for (const auto& c : conditioners_) conds.push_back(c.to_json());
    j["conditioners"] = std::move(conds);
    nlohmann::json bns = nlohmann::json::array();
    for (const auto& b : bns_) bns.push_back(b.to_json());
    j["batch_norms"] = std::move(bns);
    return j;
  }

 private:
  MafEstimator(EstimatorConfig config, std::shared_ptr<const Encoding> enc, int dim,
               bool build_networks = true)
      : FittedEstimator(std::move(config), std::move(enc), dim) {
    if (!build_networks) return;
    for (int l = 0; l < config_.n_layers; ++l) {
      auto masks = nn::made_masks(dim, {config_.hidden_units}, 2, nn::MadeOrder::Natural,
                                  mix_seed(config_.seed, 0xF100 + static_cast<std::uint64_t>(l)));
      nn::Network cond({nn::LayerSpec::masked(masks[0], nn::Activation::Tanh),
                        nn::LayerSpec::masked(masks[1])},
                       mix_seed(config_.seed, 0xF200 + static_cast<std::uint64_t>(l)));
      cond.zero_init_output_layer();
      conditioners_.push_back(std::move(cond));
      if (config_.batch_norm) {
        bns_.emplace_back(std::vector<nn::LayerSpec>{nn::LayerSpec::batchnorm(dim)},
                          mix_seed(config_.seed, 0xF300 + static_cast<std::uint64_t>(l)));
      }
    }
  }

  double bn_logdet_frozen(const nn::Network& bn_net) const {
    const nn::Layer& bn = bn_net.layer(0);
    const double eps = bn_net.bn_eps();
    double term = 0;
    for (int j = 0; j < dim_; ++j) {
      term += std::log(std::abs(bn.gamma(0, j))) - 0.5 * std::log(bn.running_var(0, j) + eps);
    }
    return term;
  }

  /// Networks in forward order (conditioner, then batch norm, per layer) so
  /// parameter registration lines up with per-batch gradient collection.
  std::vector<nn::Network*> all_networks() {
    std::vector<nn::Network*> nets;
    for (std::size_t l = 0; l < conditioners_.size(); ++l) {
      nets.push_back(&conditioners_[l]);
      if (config_.batch_norm) nets.push_back(&bns_[l]);
    }
    return nets;
  }

  /// Negative mean log-likelihood loss over one batch, built on a tape.
  struct BatchGraph {
    nn::Var loss;
    std::vector<nn::ForwardPass> passes;  // conditioner then bn, per layer
  };

  BatchGraph batch_graph(nn::Tape& tape, const Eigen::MatrixXd& batch) {
    BatchGraph g;
    const int d = dim_;
    nn::Var x = tape.leaf(batch);
    nn::Var logp = tape.leaf(nn::Mat::Zero(batch.rows(), 1));
    for (int l = 0; l < config_.n_layers; ++l) {
      auto cfp = conditioners_[static_cast<std::size_t>(l)].forward_var(tape, x, nn::Mode::Train);
      nn::Var m = tape.slice_cols(cfp.output, 0, d);
      nn::Var a = tape.clamp(tape.slice_cols(cfp.output, d, d), -clamp_, clamp_);
      x = tape.mul(tape.sub(x, m), tape.exp(tape.scale(a, -1.0)));
      logp = tape.sub(logp, tape.row_sum(a));
      g.passes.push_back(std::move(cfp));
      if (config_.batch_norm) {
        auto& bn_net = bns_[static_cast<std::size_t>(l)];
        auto bfp = bn_net.forward_var(tape, x, nn::Mode::Train);
        nn::Var gamma = bfp.param_vars[0];
        nn::Var log_abs_gamma = tape.scale(tape.log(tape.square(gamma)), 0.5);
        nn::Var log_var = tape.log(tape.add_const(bfp.bn_aux[0].batch_var, bn_net.bn_eps()));
        nn::Var per_col = tape.sub(log_abs_gamma, tape.scale(log_var, 0.5));
        logp = tape.add_scalar(logp, tape.row_sum(per_col));
        x = bfp.output;
        g.passes.push_back(std::move(bfp));
      }
      x = tape.reverse_cols(x);
    }
    nn::Var base = tape.add_const(tape.scale(tape.row_sum(tape.square(x)), -0.5),
                                  -0.5 * static_cast<double>(d) * std::log(2.0 * M_PI));
    logp = tape.add(logp, base);
    g.loss = tape.scale(tape.mean_all(logp), -1.0);
    return g;
  }

  void train_flow(const Eigen::MatrixXd& train, const Eigen::MatrixXd& val) {
    Rng rng(mix_seed(config_.seed, 0xF001));
    std::vector<nn::Mat*> params;
    for (auto* net : all_networks()) {
      for (auto* p : net->params()) params.push_back(p);
    }
    nn::AdamState adam(config_.lr);
    detail::EarlyStopper stopper(config_.patience, all_networks());

    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
      // batches of one row would make batch statistics degenerate
      for (const auto& batch_rows :
           detail::make_batches(static_cast<std::size_t>(train.rows()),
                                static_cast<std::size_t>(config_.batch_size), rng,
                                /*min_batch=*/2)) {
        const Eigen::MatrixXd batch = detail::gather_rows(train, batch_rows);
        nn::Tape tape;
        BatchGraph g = batch_graph(tape, batch);
        detail::check_finite_loss(tape.value(g.loss)(0, 0), "maf", epoch);
        tape.backward(g.loss);
        std::vector<nn::Mat> grads;
        for (const auto& fp : g.passes) {
          for (auto& gm : nn::collect_gradients(tape, fp)) grads.push_back(std::move(gm));
        }
        adam.step(params, grads);
        for (auto* net : all_networks()) net->note_mutation();
      }
      if (val.rows() > 0) {
        const double val_loss = -log_prob(val).mean();
        detail::check_finite_loss(val_loss, "maf", epoch);
        if (stopper.update(val_loss)) break;
      }
    }
    if (val.rows() > 0) stopper.restore();
  }

  std::vector<nn::Network> conditioners_;
  std::vector<nn::Network> bns_;
  double clamp_ = 7.0;
};

}  // namespace oodtk
