#pragma once

#include <cmath>
#include <vector>

#include "oodtk/common.hpp"
#include "oodtk/nn/network.hpp"

namespace oodtk::nn {

/// Adam with bias correction and the usual moment defaults.
class AdamState {
 public:
  explicit AdamState(double learning_rate) : lr_(learning_rate) {
    detail::require(learning_rate > 0, "adam: learning rate must be positive");
  }

  double learning_rate() const { return lr_; }
  long step_count() const { return t_; }

  void step(const std::vector<Mat*>& params, const std::vector<Mat>& grads) {
    detail::require(params.size() == grads.size(), "adam: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(Mat::Zero(p->rows(), p->cols()));
        v_.push_back(Mat::Zero(p->rows(), p->cols()));
      }
    }
    detail::require(m_.size() == params.size(), "adam: state does not match parameters");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      detail::require(params[i]->rows() == grads[i].rows() && params[i]->cols() == grads[i].cols(),
                      "adam: gradient shape mismatch");
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * grads[i].array().square()).matrix();
      const Mat m_hat = m_[i] / bc1;
      const Mat v_hat = v_[i] / bc2;
      params[i]->array() -= lr_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
    }
  }

  void step(Network& net, const std::vector<Mat>& grads) {
    step(net.params(), grads);
    net.note_mutation();
  }

 private:
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
};

}  // namespace oodtk::nn
