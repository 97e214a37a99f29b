#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oodtk/common.hpp"
#include "oodtk/nn/tape.hpp"

namespace oodtk::nn {

enum class Activation { Identity, Tanh, Relu };
enum class LayerKind { Dense, MaskedDense, BatchNorm };
enum class Mode { Train, Eval };

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  int in_dim = 0;
  int out_dim = 0;
  Activation activation = Activation::Identity;
  Mat mask;  // MaskedDense only: out_dim x in_dim, entries in {0,1}

  static LayerSpec dense(int in, int out, Activation act = Activation::Identity) {
    return LayerSpec{LayerKind::Dense, in, out, act, Mat()};
  }
  static LayerSpec masked(Mat mask, Activation act = Activation::Identity) {
    LayerSpec s;
    s.kind = LayerKind::MaskedDense;
    s.in_dim = static_cast<int>(mask.cols());
    s.out_dim = static_cast<int>(mask.rows());
    s.activation = act;
    s.mask = std::move(mask);
    return s;
  }
  static LayerSpec batchnorm(int dim) {
    return LayerSpec{LayerKind::BatchNorm, dim, dim, Activation::Identity, Mat()};
  }
};

struct Layer {
  LayerSpec spec;
  // Dense / MaskedDense
  Mat W;  // out x in
  Mat b;  // 1 x out
  // BatchNorm
  Mat gamma, beta, running_mean, running_var;  // 1 x dim

  bool is_batchnorm() const { return spec.kind == LayerKind::BatchNorm; }
};

/// Result of one tape forward: the output node plus parameter leaf handles in
/// the network's canonical order, and the batch-variance nodes of any
/// train-mode batch-norm layers (the flow's log-det terms need them).
class Network;
struct ForwardPass {
  Var output;
  std::vector<Var> param_vars;
  const Network* net = nullptr;
  std::uint64_t mutation_snapshot = 0;
  struct BnAux {
    std::size_t layer_index;
    Var batch_var;
    Var gamma;
  };
  std::vector<BnAux> bn_aux;
};

/// A sequential stack of dense, masked-dense and batch-norm layers with its
/// parameter store. Training mutates parameters in place; a network scored in
/// eval mode is immutable and shareable.
class Network {
 public:
  Network() = default;

  Network(std::vector<LayerSpec> specs, std::uint64_t init_seed) : init_seed_(init_seed) {
    detail::require(!specs.empty(), "network: no layers");
    int prev = specs.front().in_dim;
    for (const auto& s : specs) {
      detail::require(s.in_dim >= 1 && s.out_dim >= 1, "network: layer dims must be >= 1");
      detail::require(s.in_dim == prev, "network: layer input dim does not chain");
      if (s.kind == LayerKind::MaskedDense) {
        detail::require(s.mask.rows() == s.out_dim && s.mask.cols() == s.in_dim,
                        "network: mask shape must be out_dim x in_dim");
        for (Eigen::Index i = 0; i < s.mask.size(); ++i) {
          detail::require(s.mask(i) == 0.0 || s.mask(i) == 1.0,
                          "network: mask entries must be 0 or 1");
        }
      }
      if (s.kind == LayerKind::BatchNorm) {
        detail::require(s.in_dim == s.out_dim, "network: batchnorm dims must match");
      }
      prev = s.out_dim;
    }
    Rng rng(init_seed);
    for (auto& s : specs) {
      Layer layer;
      layer.spec = std::move(s);
      init_layer(layer, rng);
      layers_.push_back(std::move(layer));
    }
  }

  int input_dim() const { return layers_.front().spec.in_dim; }
  int output_dim() const { return layers_.back().spec.out_dim; }
  std::size_t n_layers() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_[i]; }
  Layer& layer(std::size_t i) { return layers_[i]; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::uint64_t mutation_count() const { return mutation_count_; }
  void note_mutation() { ++mutation_count_; }

  double bn_momentum() const { return bn_momentum_; }
  double bn_eps() const { return bn_eps_; }

  /// Zeroes the final dense layer so the stack starts as a constant map
  /// (bias-only output); used by the flow conditioners to start at identity.
  void zero_init_output_layer() {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      if (!it->is_batchnorm()) {
        it->W.setZero();
        it->b.setZero();
        note_mutation();
        return;
      }
    }
  }

  /// Records the computation on the tape. Train mode normalizes batch-norm
  /// layers with batch statistics and updates their running stats in place.
  ForwardPass forward(Tape& tape, const Mat& batch, Mode mode) {
    detail::require(batch.cols() == input_dim(),
                    "network: batch width " + std::to_string(batch.cols()) +
                        " does not match input dim " + std::to_string(input_dim()));
    return forward_var(tape, tape.leaf(batch), mode);
  }

  /// Same, but continues from an existing tape node so stacked networks share
  /// one differentiable graph.
  ForwardPass forward_var(Tape& tape, Var input, Mode mode) {
    detail::require(tape.value(input).cols() == input_dim(),
                    "network: input width " + std::to_string(tape.value(input).cols()) +
                        " does not match input dim " + std::to_string(input_dim()));
    ForwardPass fp;
    fp.net = this;
    fp.mutation_snapshot = mutation_count_;
    Var x = input;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      Layer& layer = layers_[li];
      if (layer.is_batchnorm()) {
        Var g = tape.leaf(layer.gamma);
        Var be = tape.leaf(layer.beta);
        fp.param_vars.push_back(g);
        fp.param_vars.push_back(be);
        if (mode == Mode::Train) {
          auto out = tape.batchnorm_train(x, g, be, bn_eps_);
          layer.running_mean = (1.0 - bn_momentum_) * layer.running_mean + bn_momentum_ * out.batch_mean;
          layer.running_var = (1.0 - bn_momentum_) * layer.running_var + bn_momentum_ * tape.value(out.batch_var);
          fp.bn_aux.push_back({li, out.batch_var, g});
          x = out.y;
        } else {
          x = tape.batchnorm_eval(x, g, be, layer.running_mean, layer.running_var, bn_eps_);
        }
      } else {
        Var w = tape.leaf(layer.W);
        Var b = tape.leaf(layer.b);
        fp.param_vars.push_back(w);
        fp.param_vars.push_back(b);
        const Mat* mask = layer.spec.kind == LayerKind::MaskedDense ? &layer.spec.mask : nullptr;
        x = tape.linear(x, w, b, mask);
      }
      switch (layers_[li].spec.activation) {
        case Activation::Identity: break;
        case Activation::Tanh: x = tape.tanh(x); break;
        case Activation::Relu: x = tape.relu(x); break;
      }
    }
    fp.output = x;
    return fp;
  }

  /// Tape-free eval forward: batch-norm uses frozen running statistics, so the
  /// map is deterministic and affine per batch-norm layer.
  Mat eval(const Mat& batch) const {
    detail::require(batch.cols() == input_dim(), "network: batch width mismatch");
    Mat x = batch;
    for (const auto& layer : layers_) {
      if (layer.is_batchnorm()) {
        Mat inv_std = (layer.running_var.array() + bn_eps_).rsqrt().matrix();
        x = ((x.rowwise() - layer.running_mean.row(0)).array().rowwise() *
             (inv_std.row(0).array() * layer.gamma.row(0).array()))
                .matrix();
        x.rowwise() += layer.beta.row(0);
      } else {
        const Mat Wm = layer.spec.kind == LayerKind::MaskedDense
                           ? Mat(layer.W.cwiseProduct(layer.spec.mask))
                           : layer.W;
        x = x * Wm.transpose();
        x.rowwise() += layer.b.row(0);
      }
      switch (layer.spec.activation) {
        case Activation::Identity: break;
        case Activation::Tanh: x = x.array().tanh().matrix(); break;
        case Activation::Relu: x = x.cwiseMax(0.0); break;
      }
    }
    return x;
  }

  /// Parameters in canonical order: per layer, (W, b) or (gamma, beta).
  std::vector<Mat*> params() {
    std::vector<Mat*> out;
    for (auto& layer : layers_) {
      if (layer.is_batchnorm()) {
        out.push_back(&layer.gamma);
        out.push_back(&layer.beta);
      } else {
        out.push_back(&layer.W);
        out.push_back(&layer.b);
      }
    }
    return out;
  }

  std::vector<const Mat*> params() const {
    std::vector<const Mat*> out;
    for (const auto& layer : layers_) {
      if (layer.is_batchnorm()) {
        out.push_back(&layer.gamma);
        out.push_back(&layer.beta);
      } else {
        out.push_back(&layer.W);
        out.push_back(&layer.b);
      }
    }
    return out;
  }

  std::size_t n_scalar_params() const {
    std::size_t n = 0;
    for (const auto* p : params()) n += static_cast<std::size_t>(p->size());
    return n;
  }

  Eigen::VectorXd flat_params() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n_scalar_params()));
    Eigen::Index at = 0;
    for (const auto* p : params()) {
      for (Eigen::Index i = 0; i < p->size(); ++i) v(at++) = (*p)(i);
    }
    return v;
  }

  void set_flat_params(const Eigen::VectorXd& v) {
    detail::require(v.size() == static_cast<Eigen::Index>(n_scalar_params()),
                    "network: flat parameter size mismatch");
    Eigen::Index at = 0;
    for (auto* p : params()) {
      for (Eigen::Index i = 0; i < p->size(); ++i) (*p)(i) = v(at++);
    }
    note_mutation();
  }

  /// Batch-norm running statistics (mean, var per batch-norm layer). These are
  /// state, not parameters: checkpoints must capture them alongside
  /// flat_params or restored weights meet normalizers from a different epoch.
  std::vector<Mat> running_stats() const {
    std::vector<Mat> out;
    for (const auto& layer : layers_) {
      if (layer.is_batchnorm()) {
        out.push_back(layer.running_mean);
        out.push_back(layer.running_var);
      }
    }
    return out;
  }

  void set_running_stats(const std::vector<Mat>& stats) {
    std::size_t at = 0;
    for (auto& layer : layers_) {
      if (layer.is_batchnorm()) {
        detail::require(at + 1 < stats.size() + 1 && at + 2 <= stats.size(),
                        "network: running stats count mismatch");
        layer.running_mean = stats[at++];
        layer.running_var = stats[at++];
      }
    }
    detail::require(at == stats.size(), "network: running stats count mismatch");
    note_mutation();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["magic"] = "OODTK-NET-v1";
    j["init_seed"] = init_seed_;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : layers_) {
      nlohmann::json lj;
      lj["kind"] = kind_name(layer.spec.kind);
      lj["in"] = layer.spec.in_dim;
      lj["out"] = layer.spec.out_dim;
      lj["activation"] = activation_name(layer.spec.activation);
      if (layer.spec.kind == LayerKind::MaskedDense) lj["mask"] = flatten(layer.spec.mask);
      if (layer.is_batchnorm()) {
        lj["gamma"] = flatten(layer.gamma);
        lj["beta"] = flatten(layer.beta);
        lj["running_mean"] = flatten(layer.running_mean);
        lj["running_var"] = flatten(layer.running_var);
      } else {
        lj["W"] = flatten(layer.W);
        lj["b"] = flatten(layer.b);
      }
      layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    return j;
  }

  static Network from_json(const nlohmann::json& j) {
    detail::require(j.value("magic", "") == std::string("OODTK-NET-v1"),
                    "network: unrecognized parameter blob");
    Network net;
    net.init_seed_ = j.at("init_seed").get<std::uint64_t>();
    for (const auto& lj : j.at("layers")) {
      Layer layer;
      layer.spec.kind = kind_from_name(lj.at("kind").get<std::string>());
      layer.spec.in_dim = lj.at("in").get<int>();
      layer.spec.out_dim = lj.at("out").get<int>();
      layer.spec.activation = activation_from_name(lj.at("activation").get<std::string>());
      if (layer.spec.kind == LayerKind::MaskedDense) {
        layer.spec.mask = unflatten(lj.at("mask"), layer.spec.out_dim, layer.spec.in_dim);
      }
      if (layer.spec.kind == LayerKind::BatchNorm) {
        layer.gamma = unflatten(lj.at("gamma"), 1, layer.spec.out_dim);
        layer.beta = unflatten(lj.at("beta"), 1, layer.spec.out_dim);
        layer.running_mean = unflatten(lj.at("running_mean"), 1, layer.spec.out_dim);
        layer.running_var = unflatten(lj.at("running_var"), 1, layer.spec.out_dim);
      } else {
        layer.W = unflatten(lj.at("W"), layer.spec.out_dim, layer.spec.in_dim);
        layer.b = unflatten(lj.at("b"), 1, layer.spec.out_dim);
      }
      net.layers_.push_back(std::move(layer));
    }
    detail::require(!net.layers_.empty(), "network: no layers in blob");
    return net;
  }

 private:
  static void init_layer(Layer& layer, Rng& rng) {
    const auto& s = layer.spec;
    if (s.kind == LayerKind::BatchNorm) {
      layer.gamma = Mat::Ones(1, s.out_dim);
      layer.beta = Mat::Zero(1, s.out_dim);
      layer.running_mean = Mat::Zero(1, s.out_dim);
      layer.running_var = Mat::Ones(1, s.out_dim);
      return;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
    layer.W = Mat(s.out_dim, s.in_dim);
    for (Eigen::Index r = 0; r < layer.W.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.W.cols(); ++c) {
        layer.W(r, c) = rng.uniform(-bound, bound);
      }
    }
    layer.b = Mat::Zero(1, s.out_dim);
  }

  static std::string kind_name(LayerKind k) {
    switch (k) {
      case LayerKind::Dense: return "dense";
      case LayerKind::MaskedDense: return "masked_dense";
      case LayerKind::BatchNorm: return "batchnorm";
    }
    return "dense";
  }
  static LayerKind kind_from_name(const std::string& s) {
    if (s == "dense") return LayerKind::Dense;
    if (s == "masked_dense") return LayerKind::MaskedDense;
    if (s == "batchnorm") return LayerKind::BatchNorm;
    throw Error("network: unknown layer kind '" + s + "'");
  }
  static std::string activation_name(Activation a) {
    switch (a) {
      case Activation::Identity: return "identity";
      case Activation::Tanh: return "tanh";
      case Activation::Relu: return "relu";
    }
    return "identity";
  }
  static Activation activation_from_name(const std::string& s) {
    if (s == "identity") return Activation::Identity;
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw Error("network: unknown activation '" + s + "'");
  }

  static std::vector<double> flatten(const Mat& m) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
    }
    return v;
  }

  static Mat unflatten(const nlohmann::json& arr, int rows, int cols) {
    detail::require(arr.is_array() && static_cast<int>(arr.size()) == rows * cols,
                    "network: parameter array size mismatch");
    Mat m(rows, cols);
    std::size_t k = 0;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) m(r, c) = arr[k++].get<double>();
    }
    return m;
  }

  std::vector<Layer> layers_;
  std::uint64_t init_seed_ = 0;
  std::uint64_t mutation_count_ = 0;
  double bn_momentum_ = 0.1;
  double bn_eps_ = 1e-5;
};

/// Collects parameter gradients after a tape backward, in the network's
/// canonical parameter order. Throws if parameters changed since the forward.
inline std::vector<Mat> collect_gradients(const Tape& tape, const ForwardPass& fp) {
  detail::require(fp.net != nullptr, "collect_gradients: empty forward pass");
  detail::require(fp.net->mutation_count() == fp.mutation_snapshot,
                  "tape reuse after parameter mutation");
  std::vector<Mat> grads;
  grads.reserve(fp.param_vars.size());
  for (Var v : fp.param_vars) grads.push_back(tape.grad(v));
  return grads;
}

/// Seeds the network output with `loss_grad` and returns parameter gradients.
inline std::vector<Mat> backward(Tape& tape, const ForwardPass& fp, const Mat& loss_grad) {
  detail::require(fp.net != nullptr, "backward: empty forward pass");
  detail::require(fp.net->mutation_count() == fp.mutation_snapshot,
                  "tape reuse after parameter mutation");
  tape.backward(fp.output, loss_grad);
  return collect_gradients(tape, fp);
}

}  // namespace oodtk::nn
