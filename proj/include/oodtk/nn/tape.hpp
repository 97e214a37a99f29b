#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "oodtk/common.hpp"

namespace oodtk::nn {

using Mat = Eigen::MatrixXd;

/// Handle to a tape node.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Reverse-mode autodiff over dense matrices. Operations append nodes in
/// topological order (parents always precede children), so the backward pass
/// is a single reverse sweep. A tape is single-use: one forward graph, one
/// backward call.
class Tape {
 public:
  Var leaf(Mat value) { return push(std::move(value), nullptr); }

  const Mat& value(Var v) const { return nodes_[check(v)].value; }
  const Mat& grad(Var v) const { return nodes_[check(v)].grad; }

  std::size_t size() const { return nodes_.size(); }

  /// y = x * (W (.* mask))^T + broadcast bias. x: n x in, w: out x in, b: 1 x out.
  Var linear(Var x, Var w, Var b, const Mat* mask = nullptr) {
    const Mat& X = value(x);
    const Mat& W = value(w);
    const Mat& B = value(b);
    detail::require(W.cols() == X.cols(), "linear: weight/input width mismatch (" +
                                              std::to_string(W.cols()) + " vs " +
                                              std::to_string(X.cols()) + ")");
    detail::require(B.rows() == 1 && B.cols() == W.rows(), "linear: bias shape mismatch");
    Mat Wm = mask ? Mat(W.cwiseProduct(*mask)) : W;
    Mat Y = X * Wm.transpose();
    Y.rowwise() += B.row(0);
    Mat mask_copy = mask ? *mask : Mat();
    return push(std::move(Y), [x, w, b, Wm, mask_copy](Tape& t, const Mat& g) {
      t.nodes_[x.idx].grad.noalias() += g * Wm;
      if (mask_copy.size() > 0) {
        t.nodes_[w.idx].grad.noalias() +=
            (g.transpose() * t.nodes_[x.idx].value).cwiseProduct(mask_copy);
      } else {
        t.nodes_[w.idx].grad.noalias() += g.transpose() * t.nodes_[x.idx].value;
      }
      t.nodes_[b.idx].grad.row(0) += g.colwise().sum();
    });
  }

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    return push(Mat(value(a) + value(b)), [a, b](Tape& t, const Mat& g) {
      t.nodes_[a.idx].grad += g;
      t.nodes_[b.idx].grad += g;
    });
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    return push(Mat(value(a) - value(b)), [a, b](Tape& t, const Mat& g) {
      t.nodes_[a.idx].grad += g;
      t.nodes_[b.idx].grad -= g;
    });
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    return push(Mat(value(a).cwiseProduct(value(b))), [a, b](Tape& t, const Mat& g) {
      t.nodes_[a.idx].grad += g.cwiseProduct(t.nodes_[b.idx].value);
      t.nodes_[b.idx].grad += g.cwiseProduct(t.nodes_[a.idx].value);
    });
  }

  Var scale(Var a, double c) {
    return push(Mat(value(a) * c),
                [a, c](Tape& t, const Mat& g) { t.nodes_[a.idx].grad += g * c; });
  }

  Var add_const(Var a, double c) {
    return push(Mat((value(a).array() + c).matrix()),
                [a](Tape& t, const Mat& g) { t.nodes_[a.idx].grad += g; });
  }

  Var exp(Var a) {
    Mat y = value(a).array().exp().matrix();
    return push(y, [a, y](Tape& t, const Mat& g) { t.nodes_[a.idx].grad += g.cwiseProduct(y); });
  }

  Var log(Var a) {
    return push(Mat(value(a).array().log().matrix()), [a](Tape& t, const Mat& g) {
      t.nodes_[a.idx].grad += g.cwiseQuotient(t.nodes_[a.idx].value);
    });
  }

  Var tanh(Var a) {
    Mat y = value(a).array().tanh().matrix();
    return push(y, [a, y](Tape& t, const Mat& g) {
      t.nodes_[a.idx].grad += g.cwiseProduct(Mat((1.0 - y.array().square()).matrix()));
    });
  }

  Var relu(Var a) {
    Mat y = value(a).cwiseMax(0.0);
    return push(y, [a](Tape& t, const Mat& g) {
      const Mat& x = t.nodes_[a.idx].value;
      t.nodes_[a.idx].grad += g.cwiseProduct(Mat((x.array() > 0.0).cast<double>().matrix()));
    });
  }

  Var square(Var a) {
    return push(Mat(value(a).array().square().matrix()), [a](Tape& t, const Mat& g) {
      t.nodes_[a.idx].grad += 2.0 * g.cwiseProduct(t.nodes_[a.idx].value);
    });
  }

  /// Clamp with straight-through gradient inside [lo, hi], zero outside.
  Var clamp(Var a, double lo, double hi) {
    Mat y = value(a).cwiseMax(lo).cwiseMin(hi);
    return push(y, [a, lo, hi](Tape& t, const Mat& g) {
      const Mat& x = t.nodes_[a.idx].value;
      const Mat pass = ((x.array() >= lo) && (x.array() <= hi)).cast<double>().matrix();
      t.nodes_[a.idx].grad += g.cwiseProduct(pass);
    });
  }

  /// n x m -> n x 1.
  Var row_sum(Var a) {
    Mat y = value(a).rowwise().sum();
    return push(y, [a](Tape& t, const Mat& g) { t.nodes_[a.idx].grad.colwise() += g.col(0); });
  }

  Var sum_all(Var a) {
    Mat y(1, 1);
    y(0, 0) = value(a).sum();
    return push(y, [a](Tape& t, const Mat& g) { t.nodes_[a.idx].grad.array() += g(0, 0); });
  }

  Var mean_all(Var a) {
    const double n = static_cast<double>(value(a).size());
    Mat y(1, 1);
    y(0, 0) = value(a).sum() / n;
    return push(y, [a, n](Tape& t, const Mat& g) { t.nodes_[a.idx].grad.array() += g(0, 0) / n; });
  }

  /// a + s broadcast, s a 1 x 1 node.
  Var add_scalar(Var a, Var s) {
    detail::require(value(s).rows() == 1 && value(s).cols() == 1, "add_scalar: s must be 1x1");
    return push(Mat((value(a).array() + value(s)(0, 0)).matrix()), [a, s](Tape& t, const Mat& g) {
      t.nodes_[a.idx].grad += g;
      t.nodes_[s.idx].grad(0, 0) += g.sum();
    });
  }

  Var slice_cols(Var a, int start, int width) {
    const Mat& x = value(a);
    detail::require(start >= 0 && width >= 0 && start + width <= x.cols(),
                    "slice_cols: out of range");
    return push(Mat(x.middleCols(start, width)), [a, start, width](Tape& t, const Mat& g) {
      t.nodes_[a.idx].grad.middleCols(start, width) += g;
    });
  }

  Var reverse_cols(Var a) {
    return push(Mat(value(a).rowwise().reverse()), [a](Tape& t, const Mat& g) {
      t.nodes_[a.idx].grad += g.rowwise().reverse();
    });
  }

  struct BatchNormOut {
    Var y;
    Var batch_var;  // 1 x m node; participates in flow log-det terms
    Mat batch_mean;
  };

  /// Train-mode batch normalization with population batch statistics.
  /// gamma/beta: 1 x m parameter nodes.
  BatchNormOut batchnorm_train(Var x, Var gamma, Var beta, double eps) {
    const Mat& X = value(x);
    const Eigen::Index n = X.rows();
    const Eigen::Index m = X.cols();
    detail::require(n >= 1, "batchnorm: empty batch");
    detail::require(value(gamma).rows() == 1 && value(gamma).cols() == m, "batchnorm: gamma shape");
    detail::require(value(beta).rows() == 1 && value(beta).cols() == m, "batchnorm: beta shape");
    Mat mu = X.colwise().mean();
    Mat centered = X.rowwise() - mu.row(0);
    Mat var = (centered.array().square().colwise().sum() / static_cast<double>(n)).matrix();
    Mat inv_std = (var.array() + eps).rsqrt().matrix();
    Mat xhat = (centered.array().rowwise() * inv_std.row(0).array()).matrix();
    Mat y = ((xhat.array().rowwise() * value(gamma).row(0).array()).rowwise() +
             value(beta).row(0).array())
                .matrix();

    Var y_var = push(std::move(y), [x, gamma, beta, xhat, inv_std, n](Tape& t, const Mat& g) {
      t.nodes_[beta.idx].grad.row(0) += g.colwise().sum();
      t.nodes_[gamma.idx].grad.row(0) += g.cwiseProduct(xhat).colwise().sum();
      const Mat gxhat =
          (g.array().rowwise() * t.nodes_[gamma.idx].value.row(0).array()).matrix();
      const Mat sum_g = gxhat.colwise().sum();                      // 1 x m
      const Mat sum_gx = gxhat.cwiseProduct(xhat).colwise().sum();  // 1 x m
      const double dn = static_cast<double>(n);
      Mat gx = dn * gxhat;
      gx.rowwise() -= sum_g.row(0);
      gx -= (xhat.array().rowwise() * sum_gx.row(0).array()).matrix();
      gx = (gx.array().rowwise() * (inv_std.row(0).array() / dn)).matrix();
      t.nodes_[x.idx].grad += gx;
    });

    Var var_var = push(var, [x, mu, n](Tape& t, const Mat& g) {
      const Mat& X2 = t.nodes_[x.idx].value;
      const double dn = static_cast<double>(n);
      Mat centered2 = X2.rowwise() - mu.row(0);
      t.nodes_[x.idx].grad +=
          ((centered2.array().rowwise() * g.row(0).array()) * (2.0 / dn)).matrix();
    });
    return BatchNormOut{y_var, var_var, mu};
  }

  /// Eval-mode batch normalization: a frozen affine map using running stats.
  Var batchnorm_eval(Var x, Var gamma, Var beta, const Mat& running_mean,
                     const Mat& running_var, double eps) {
    const Mat& X = value(x);
    detail::require(running_mean.cols() == X.cols() && running_var.cols() == X.cols(),
                    "batchnorm_eval: running stats shape");
    Mat inv_std = (running_var.array() + eps).rsqrt().matrix();
    Mat xhat =
        ((X.rowwise() - running_mean.row(0)).array().rowwise() * inv_std.row(0).array()).matrix();
    Mat y = ((xhat.array().rowwise() * value(gamma).row(0).array()).rowwise() +
             value(beta).row(0).array())
                .matrix();
    return push(std::move(y), [x, gamma, beta, xhat, inv_std](Tape& t, const Mat& g) {
      t.nodes_[beta.idx].grad.row(0) += g.colwise().sum();
      t.nodes_[gamma.idx].grad.row(0) += g.cwiseProduct(xhat).colwise().sum();
      const Mat coeff = t.nodes_[gamma.idx].value.cwiseProduct(inv_std);
      t.nodes_[x.idx].grad += (g.array().rowwise() * coeff.row(0).array()).matrix();
    });
  }

  /// Seeds the output gradient and sweeps the tape once. A second call throws.
  void backward(Var out, const Mat& seed) {
    detail::require(!consumed_, "tape: backward already ran on this tape");
    consumed_ = true;
    Node& o = nodes_[check(out)];
    detail::require(seed.rows() == o.value.rows() && seed.cols() == o.value.cols(),
                    "tape: seed shape does not match output");
    o.grad = seed;
    for (int i = out.idx; i >= 0; --i) {
      if (nodes_[i].backprop) nodes_[i].backprop(*this, nodes_[i].grad);
    }
  }

  void backward(Var out) { backward(out, Mat::Ones(value(out).rows(), value(out).cols())); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, const Mat&)> backprop;
  };

  int check(Var v) const {
    detail::require(v.idx >= 0 && v.idx < static_cast<int>(nodes_.size()), "tape: invalid var");
    return v.idx;
  }

  void same_shape(Var a, Var b, const char* op) const {
    detail::require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
                    std::string(op) + ": shape mismatch");
  }

  Var push(Mat value, std::function<void(Tape&, const Mat&)> backprop) {
    Node node;
    node.value = std::move(value);
    node.grad = Mat::Zero(node.value.rows(), node.value.cols());
    node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace oodtk::nn
