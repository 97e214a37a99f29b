#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "oodtk/common.hpp"
#include "oodtk/encoding.hpp"
#include "oodtk/nn/network.hpp"

namespace oodtk {

/// Configuration for one of the five detectors. Hyperparameter defaults are
/// the values the toolkit ships with; any of them can be overridden in the
/// experiment config. Fields are interpreted per kind.
struct EstimatorConfig {
  std::string kind;  // "ppca" | "lof" | "ae" | "vae" | "maf"
  std::string name;  // display name; defaults to kind

  int q = 19;  // ppca components
  int k = 5;   // lof neighbors

  std::vector<int> hidden_dims;  // ae / vae encoder widths (decoder mirrors)
  int latent_dim = 0;
  double lr = 0.0;
  int beta_warmup_epochs = 10;  // vae KL warm-up length

  int n_layers = 20;      // maf flow depth
  int hidden_units = 256; // maf conditioner width
  bool batch_norm = true; // maf batch normalization between layers

  int epochs = 30;
  int batch_size = 64;
  int patience = 5;
  std::uint64_t seed = 0;

  static EstimatorConfig defaults(const std::string& kind) {
    EstimatorConfig c;
    c.kind = kind;
    c.name = kind;
    if (kind == "ppca") {
      c.q = 19;
    } else if (kind == "lof") {
      c.k = 5;
    } else if (kind == "ae") {
      c.hidden_dims = {75};
      c.latent_dim = 20;
      c.lr = 0.007;
    } else if (kind == "vae") {
      c.hidden_dims = {25, 25, 25};
      c.latent_dim = 10;
      c.lr = 0.001;
      c.beta_warmup_epochs = 10;
    } else if (kind == "maf") {
      c.n_layers = 20;
      c.hidden_units = 256;
      c.lr = 0.001;
      c.batch_norm = true;
    } else {
      throw Error("estimator: unknown kind '" + kind + "'");
    }
    return c;
  }

  void validate() const {
    if (kind == "ppca") {
      detail::require(q >= 1, "ppca: q must be >= 1");
    } else if (kind == "lof") {
      detail::require(k >= 1, "lof: k must be >= 1");
    } else if (kind == "ae" || kind == "vae") {
      detail::require(latent_dim >= 1, kind + ": latent_dim must be >= 1");
      detail::require(!hidden_dims.empty(), kind + ": hidden_dims must not be empty");
      for (int h : hidden_dims) detail::require(h >= 1, kind + ": hidden dims must be >= 1");
      detail::require(lr > 0, kind + ": lr must be positive");
      detail::require(beta_warmup_epochs >= 0, "vae: beta_warmup_epochs must be >= 0");
    } else if (kind == "maf") {
      detail::require(n_layers >= 1, "maf: n_layers must be >= 1");
      detail::require(hidden_units >= 1, "maf: hidden_units must be >= 1");
      detail::require(lr > 0, "maf: lr must be positive");
    } else {
      throw Error("estimator: unknown kind '" + kind + "'");
    }
    detail::require(epochs >= 1 && batch_size >= 1 && patience >= 0,
                    "estimator: bad training loop settings");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = kind;
    j["name"] = name;
    if (kind == "ppca") j["q"] = q;
    if (kind == "lof") j["k"] = k;
    if (kind == "ae" || kind == "vae") {
      j["hidden_dims"] = hidden_dims;
      j["latent_dim"] = latent_dim;
      j["lr"] = lr;
    }
    if (kind == "vae") j["beta_warmup_epochs"] = beta_warmup_epochs;
    if (kind == "maf") {
      j["n_layers"] = n_layers;
      j["hidden_units"] = hidden_units;
      j["lr"] = lr;
      j["batch_norm"] = batch_norm;
    }
    if (kind == "ae" || kind == "vae" || kind == "maf") {
      j["epochs"] = epochs;
      j["batch_size"] = batch_size;
      j["patience"] = patience;
    }
    j["seed"] = seed;
    return j;
  }

  static EstimatorConfig from_json(const nlohmann::json& j) {
    detail::require(j.is_object() && j.contains("kind"), "estimator config: missing 'kind'");
    EstimatorConfig c = defaults(j.at("kind").get<std::string>());
    if (j.contains("name")) c.name = j.at("name").get<std::string>();
    if (j.contains("q")) c.q = j.at("q").get<int>();
    if (j.contains("k")) c.k = j.at("k").get<int>();
    if (j.contains("hidden_dims")) c.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
    if (j.contains("latent_dim")) c.latent_dim = j.at("latent_dim").get<int>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("beta_warmup_epochs")) c.beta_warmup_epochs = j.at("beta_warmup_epochs").get<int>();
    if (j.contains("n_layers")) c.n_layers = j.at("n_layers").get<int>();
    if (j.contains("hidden_units")) c.hidden_units = j.at("hidden_units").get<int>();
    if (j.contains("batch_norm")) c.batch_norm = j.at("batch_norm").get<bool>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("patience")) c.patience = j.at("patience").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  }
};

/// KL warm-up: beta ramps linearly from 0 to 1 over `warmup_epochs`;
/// warmup 0 keeps beta at 1 throughout.
inline double beta_schedule(int epoch, int warmup_epochs) {
  detail::require(epoch >= 0, "beta_schedule: epoch must be >= 0");
  detail::require(warmup_epochs >= 0, "beta_schedule: warmup must be >= 0");
  if (warmup_epochs == 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(warmup_epochs));
}

/// An immutable trained novelty model. One contract for all five kinds:
/// higher score = more novel.
class FittedEstimator {
 public:
  virtual ~FittedEstimator() = default;

  const EstimatorConfig& config() const { return config_; }
  const std::string& name() const { return config_.name; }
  const std::string& kind() const { return config_.kind; }
  int input_dim() const { return dim_; }
  const std::shared_ptr<const Encoding>& encoding() const { return encoding_; }

  /// "log_prob", "reconstr_err" or "outlier_score": the novelty metric, used
  /// as the row label in benchmark tables.
  virtual std::string metric_label() const = 0;

  Eigen::VectorXd score(const Eigen::MatrixXd& X) const {
    detail::require(X.cols() == dim_,
                    name() + ": input width " + std::to_string(X.cols()) +
                        " does not match training width " + std::to_string(dim_));
    Eigen::VectorXd s = score_rows(X);
    detail::require(s.allFinite(), name() + ": non-finite novelty score");
    return s;
  }

  Eigen::VectorXd score(const EncodedMatrix& X) const { return score(X.values); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["magic"] = "OODTK-EST-v1";
    j["config"] = config_.to_json();
    j["input_dim"] = dim_;
    if (encoding_) j["encoding"] = encoding_->to_json();
    j["params"] = params_json();
    return j;
  }

 protected:
  FittedEstimator(EstimatorConfig config, std::shared_ptr<const Encoding> enc, int dim)
      : config_(std::move(config)), encoding_(std::move(enc)), dim_(dim) {}

  virtual Eigen::VectorXd score_rows(const Eigen::MatrixXd& X) const = 0;
  virtual nlohmann::json params_json() const = 0;

  EstimatorConfig config_;
  std::shared_ptr<const Encoding> encoding_;
  int dim_ = 0;
};

namespace detail {

/// Validation-loss early stopping with best-parameter restore, shared by the
/// trained estimators.
class EarlyStopper {
 public:
  EarlyStopper(int patience, std::vector<nn::Network*> nets)
      : patience_(patience), nets_(std::move(nets)) {}

  /// Returns true when training should stop.
  bool update(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      since_best_ = 0;
      snapshot_.clear();
      running_snapshot_.clear();
      for (auto* net : nets_) {
        snapshot_.push_back(net->flat_params());
        running_snapshot_.push_back(net->running_stats());
      }
    } else {
      ++since_best_;
    }
    return since_best_ > patience_;
  }

  void restore() {
    if (snapshot_.empty()) return;
    for (std::size_t i = 0; i < nets_.size(); ++i) {
      nets_[i]->set_flat_params(snapshot_[i]);
      nets_[i]->set_running_stats(running_snapshot_[i]);
    }
  }

 private:
  int patience_;
  std::vector<nn::Network*> nets_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
  std::vector<Eigen::VectorXd> snapshot_;
  std::vector<std::vector<nn::Mat>> running_snapshot_;
};

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          Rng& rng, std::size_t min_batch = 1) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < n; at += batch_size) {
    const std::size_t take = std::min(batch_size, n - at);
    if (take < min_batch) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(at + take));
  }
  return batches;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& X, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

inline void check_finite_loss(double loss, const std::string& who, int epoch) {
  if (!std::isfinite(loss)) {
    throw Error(who + ": non-finite loss at epoch " + std::to_string(epoch));
  }
}

}  // namespace detail

}  // namespace oodtk
