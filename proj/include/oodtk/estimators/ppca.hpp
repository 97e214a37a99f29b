#pragma once

#include <cmath>
#include <memory>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "oodtk/estimators/estimator.hpp"

namespace oodtk {

/// Probabilistic PCA fitted in closed form: mean, loading matrix from the top
/// q eigenpairs of the sample covariance, isotropic noise from the discarded
/// eigenvalues. Score is the negated Gaussian log-density under
/// C = W W^T + sigma^2 I.
class PpcaEstimator final : public FittedEstimator {
 public:
  struct Params {
    Eigen::VectorXd mu;
    Eigen::MatrixXd W;  // d x q
    double sigma2 = 0;
  };

  static std::unique_ptr<PpcaEstimator> fit(EstimatorConfig config,
                                            std::shared_ptr<const Encoding> enc,
                                            const Eigen::MatrixXd& train) {
    config.validate();
    const auto n = train.rows();
    const auto d = train.cols();
    detail::require(n >= 2, "ppca: need at least 2 training rows");
    detail::require(config.q < d, "ppca: q (" + std::to_string(config.q) +
                                      ") must be smaller than the encoded dimension (" +
                                      std::to_string(d) + ")");
    Params p = closed_form(train, config.q);
    return std::unique_ptr<PpcaEstimator>(
        new PpcaEstimator(std::move(config), std::move(enc), static_cast<int>(d), std::move(p)));
  }

  /// mu = sample mean; S = (n-1)-normalized covariance, symmetrized;
  /// sigma^2 = mean of the d-q smallest eigenvalues (floored, see below);
  /// W = U_q (Lambda_q - sigma^2 I)^{1/2}.
  static Params closed_form(const Eigen::MatrixXd& train, int q) {
    const auto n = train.rows();
    const auto d = train.cols();
    Params p;
    p.mu = train.colwise().mean();
    Eigen::MatrixXd centered = train.rowwise() - p.mu.transpose();
    Eigen::MatrixXd S = centered.transpose() * centered / static_cast<double>(n - 1);
    S = ((S + S.transpose()) / 2.0).eval();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    detail::require(es.info() == Eigen::Success, "ppca: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();  // ascending
    const double max_ev = std::max(1.0, ev.cwiseAbs().maxCoeff());
    detail::require(ev.minCoeff() > -1e-10 * max_ev,
                    "ppca: covariance is not positive semi-definite after symmetrization");
    ev = ev.cwiseMax(0.0);

    const auto n_discard = d - q;
    p.sigma2 = n_discard > 0 ? ev.head(n_discard).sum() / static_cast<double>(n_discard) : 0.0;
    // Floor against exactly low-rank data, which would otherwise give an
    // unbounded density.
    p.sigma2 = std::max(p.sigma2, 1e-6 * ev.sum() / static_cast<double>(d));
    if (p.sigma2 <= 0.0) p.sigma2 = 1e-12;

    p.W.resize(d, q);
    for (int j = 0; j < q; ++j) {
      const auto src = d - 1 - j;  // largest eigenvalues first
      const double scale = std::sqrt(std::max(ev(src) - p.sigma2, 0.0));
      p.W.col(j) = es.eigenvectors().col(src) * scale;
    }
    return p;
  }

  /// Builds a scorer from explicit parameters (used with closed_form when a
  /// caller wants q outside the estimator-config range, e.g. q = d).
  static std::unique_ptr<PpcaEstimator> from_params(EstimatorConfig config,
                                                    std::shared_ptr<const Encoding> enc, int dim,
                                                    Params p) {
    return std::unique_ptr<PpcaEstimator>(
        new PpcaEstimator(std::move(config), std::move(enc), dim, std::move(p)));
  }

  /// Per-row Gaussian log-density under the fitted model.
  Eigen::VectorXd log_likelihood(const Eigen::MatrixXd& X) const {
    const Eigen::MatrixXd centered = X.rowwise() - params_.mu.transpose();
    const Eigen::MatrixXd solved = llt_.solve(centered.transpose());  // d x n
    Eigen::VectorXd quad = (centered.transpose().cwiseProduct(solved)).colwise().sum();
    const double d = static_cast<double>(dim_);
    return (-0.5 * quad.array() - 0.5 * d * std::log(2.0 * M_PI) - 0.5 * log_det_c_).matrix();
  }

  const Params& params() const { return params_; }
  std::string metric_label() const override { return "log_prob"; }

  static std::unique_ptr<PpcaEstimator> from_json(EstimatorConfig config,
                                                  std::shared_ptr<const Encoding> enc,
                                                  const nlohmann::json& j) {
    Params p;
    const int d = j.at("dim").get<int>();
    const int q = j.at("q").get<int>();
    p.sigma2 = j.at("sigma2").get<double>();
    p.mu.resize(d);
    for (int i = 0; i < d; ++i) p.mu(i) = j.at("mu")[static_cast<std::size_t>(i)].get<double>();
    p.W.resize(d, q);
    std::size_t at = 0;
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < q; ++c) p.W(r, c) = j.at("W")[at++].get<double>();
    }
    return std::unique_ptr<PpcaEstimator>(
        new PpcaEstimator(std::move(config), std::move(enc), d, std::move(p)));
  }

 protected:
  Eigen::VectorXd score_rows(const Eigen::MatrixXd& X) const override {
    return -log_likelihood(X);
  }

  nlohmann::json params_json() const override {
    nlohmann::json j;
    j["dim"] = dim_;
    j["q"] = static_cast<int>(params_.W.cols());
    j["sigma2"] = params_.sigma2;
    nlohmann::json mu = nlohmann::json::array();
    for (Eigen::Index i = 0; i < params_.mu.size(); ++i) mu.push_back(params_.mu(i));
    j["mu"] = std::move(mu);
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index r = 0; r < params_.W.rows(); ++r) {
      for (Eigen::Index c = 0; c < params_.W.cols(); ++c) w.push_back(params_.W(r, c));
    }
    j["W"] = std::move(w);
    return j;
  }

 private:
  PpcaEstimator(EstimatorConfig config, std::shared_ptr<const Encoding> enc, int dim, Params p)
      : FittedEstimator(std::move(config), std::move(enc), dim), params_(std::move(p)) {
    Eigen::MatrixXd C = params_.W * params_.W.transpose();
    C.diagonal().array() += params_.sigma2;
    llt_.compute(C);
    detail::require(llt_.info() == Eigen::Success, "ppca: model covariance not positive definite");
    log_det_c_ = 2.0 * llt_.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

  Params params_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_det_c_ = 0;
};

}  // namespace oodtk
