#pragma once

#include <memory>

#include "oodtk/estimators/autoencoder.hpp"
#include "oodtk/estimators/estimator.hpp"
#include "oodtk/estimators/flow.hpp"
#include "oodtk/estimators/lof.hpp"
#include "oodtk/estimators/ppca.hpp"

namespace oodtk {

/// Fits any of the five detector kinds on encoded training data. `val` may be
/// empty, which disables early stopping for the trained kinds; PPCA and LOF
/// ignore it.
inline std::unique_ptr<FittedEstimator> fit_estimator(const EstimatorConfig& config,
                                                      const EncodedMatrix& train,
                                                      const EncodedMatrix& val) {
  detail::require(train.n_rows() > 0, "fit_estimator: empty training set");
  if (val.n_rows() > 0) {
    detail::require(val.values.cols() == train.values.cols(),
                    "fit_estimator: validation width does not match training width");
  }
  if (config.kind == "ppca") return PpcaEstimator::fit(config, train.encoding, train.values);
  if (config.kind == "lof") return LofEstimator::fit(config, train.encoding, train.values);
  if (config.kind == "ae") return AeEstimator::fit(config, train.encoding, train.values, val.values);
  if (config.kind == "vae") return VaeEstimator::fit(config, train.encoding, train.values, val.values);
  if (config.kind == "maf") return MafEstimator::fit(config, train.encoding, train.values, val.values);
  throw Error("fit_estimator: unknown kind '" + config.kind + "'");
}

inline std::unique_ptr<FittedEstimator> load_estimator(const nlohmann::json& j) {
  detail::require(j.value("magic", "") == std::string("OODTK-EST-v1"),
                  "load_estimator: unrecognized estimator blob");
  EstimatorConfig config = EstimatorConfig::from_json(j.at("config"));
  std::shared_ptr<const Encoding> enc;
  if (j.contains("encoding")) {
    enc = std::make_shared<const Encoding>(Encoding::from_json(j.at("encoding")));
  }
  const auto& params = j.at("params");
  if (config.kind == "ppca") return PpcaEstimator::from_json(std::move(config), std::move(enc), params);
  if (config.kind == "lof") return LofEstimator::from_json(std::move(config), std::move(enc), params);
  if (config.kind == "ae") return AeEstimator::from_json(std::move(config), std::move(enc), params);
  if (config.kind == "vae") return VaeEstimator::from_json(std::move(config), std::move(enc), params);
  if (config.kind == "maf") return MafEstimator::from_json(std::move(config), std::move(enc), params);
  throw Error("load_estimator: unknown kind '" + config.kind + "'");
}

}  // namespace oodtk
