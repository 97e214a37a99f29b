#include <doctest.h>

#include <cmath>

#include "oodtk/nn/adam.hpp"
#include "oodtk/nn/made.hpp"
#include "oodtk/nn/network.hpp"

using namespace oodtk;
using namespace oodtk::nn;

namespace {

double train_loss(Network& net, const Mat& X) {
  Tape t;
  auto fp = net.forward(t, X, Mode::Train);
  Var loss = t.mean_all(t.square(fp.output));
  return t.value(loss)(0, 0);
}

Eigen::VectorXd analytic_gradient(Network& net, const Mat& X) {
  Tape t;
  auto fp = net.forward(t, X, Mode::Train);
  Var loss = t.mean_all(t.square(fp.output));
  t.backward(loss);
  auto grads = collect_gradients(t, fp);
  Eigen::VectorXd flat(static_cast<Eigen::Index>(net.n_scalar_params()));
  Eigen::Index at = 0;
  for (const auto& g : grads) {
    for (Eigen::Index i = 0; i < g.size(); ++i) flat(at++) = g(i);
  }
  return flat;
}

Eigen::VectorXd finite_difference_gradient(Network& net, const Mat& X, double h) {
  const Eigen::VectorXd theta = net.flat_params();
  Eigen::VectorXd grad(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd up = theta, dn = theta;
    up(i) += h;
    dn(i) -= h;
    net.set_flat_params(up);
    const double lu = train_loss(net, X);
    net.set_flat_params(dn);
    const double ld = train_loss(net, X);
    grad(i) = (lu - ld) / (2 * h);
  }
  net.set_flat_params(theta);
  return grad;
}

/// Fraction of coordinates whose relative error is below `tol`.
double gradient_agreement(Network& net, const Mat& X, double tol) {
  const Eigen::VectorXd a = analytic_gradient(net, X);
  const Eigen::VectorXd f = finite_difference_gradient(net, X, 1e-5);
  Eigen::Index ok = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a(i)), std::abs(f(i)), 1e-4});
    if (std::abs(a(i) - f(i)) / denom < tol) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("identity dense layer reproduces its input") {
  Network net({LayerSpec::dense(3, 3)}, 0);
  net.layer(0).W = Mat::Identity(3, 3);
  net.layer(0).b = Mat::Zero(1, 3);
  Mat X = Mat::Random(5, 3);
  CHECK((net.eval(X) - X).cwiseAbs().maxCoeff() == 0.0);

  Tape t;
  auto fp = net.forward(t, X, Mode::Eval);
  CHECK((t.value(fp.output) - X).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("masked dense with a zero mask outputs the broadcast bias") {
  Mat mask = Mat::Zero(2, 3);
  Network net({LayerSpec::masked(mask)}, 7);
  net.layer(0).b << 1.5, -2.5;
  Mat X = Mat::Random(4, 3);
  Mat Y = net.eval(X);
  for (int r = 0; r < 4; ++r) {
    CHECK(Y(r, 0) == 1.5);
    CHECK(Y(r, 1) == -2.5);
  }
}

TEST_CASE("train-mode batchnorm in a network normalizes the batch") {
  Network net({LayerSpec::batchnorm(1)}, 0);
  Mat X(3, 1);
  X << 1, 2, 3;
  Tape t;
  auto fp = net.forward(t, X, Mode::Train);
  const Mat& y = t.value(fp.output);
  CHECK(y.col(0).mean() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("eval-mode batchnorm is a frozen affine map") {
  Network net({LayerSpec::batchnorm(3)}, 0);
  // push the running stats away from the defaults with a few training batches
  Rng rng(5);
  for (int it = 0; it < 8; ++it) {
    Mat batch(16, 3);
    for (int r = 0; r < 16; ++r) {
      for (int c = 0; c < 3; ++c) batch(r, c) = 2.0 + 3.0 * rng.normal();
    }
    Tape t;
    net.forward(t, batch, Mode::Train);
  }
  Mat x1 = Mat::Random(1, 3), x2 = Mat::Random(1, 3);
  const Mat f0 = net.eval(Mat::Zero(1, 3));
  const Mat f1 = net.eval(x1);
  const Mat f2 = net.eval(x2);
  const Mat f12 = net.eval(x1 + x2);
  CHECK((f12 - f1 - f2 + f0).cwiseAbs().maxCoeff() < 1e-12);
  // frozen between calls
  CHECK((net.eval(x1) - f1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradients match central finite differences on random stacks") {
  int instance = 0;
  double worst = 1.0;
  for (int rep = 0; rep < 4; ++rep) {
    Rng rng(1000 + rep);
    Mat X(6, 4);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();

    // dense tanh stack
    {
      Network net({LayerSpec::dense(4, 5, Activation::Tanh), LayerSpec::dense(5, 3)},
                  40 + rep);
      worst = std::min(worst, gradient_agreement(net, X, 1e-4));
      ++instance;
    }
    // masked autoregressive stack
    {
      auto masks = made_masks(4, {6}, 2, MadeOrder::Natural, 9 + rep);
      Network net({LayerSpec::masked(masks[0], Activation::Tanh), LayerSpec::masked(masks[1])},
                  60 + rep);
      worst = std::min(worst, gradient_agreement(net, X, 1e-4));
      ++instance;
    }
    // batch-norm sandwich with relu
    {
      Network net({LayerSpec::dense(4, 6, Activation::Relu), LayerSpec::batchnorm(6),
                   LayerSpec::dense(6, 2)},
                  80 + rep);
      worst = std::min(worst, gradient_agreement(net, X, 1e-4));
      ++instance;
    }
  }
  CHECK(instance == 12);
  CHECK(worst >= 0.99);
}

TEST_CASE("adam first step with g=2 and lr=0.1 moves by about -0.1") {
  Network net({LayerSpec::dense(1, 1)}, 0);
  net.layer(0).W(0, 0) = 1.0;
  AdamState adam(0.1);
  std::vector<Mat> grads = {Mat::Constant(1, 1, 2.0), Mat::Zero(1, 1)};
  adam.step(net, grads);
  // bias-corrected update: -lr * g / (|g| + eps)
  CHECK(std::abs(net.layer(0).W(0, 0) - (1.0 - 0.1)) < 1e-7);
  CHECK(net.layer(0).b(0, 0) == 0.0);
}

TEST_CASE("adam leaves parameters untouched under zero gradients") {
  Network net({LayerSpec::dense(2, 2, Activation::Tanh)}, 3);
  const Eigen::VectorXd before = net.flat_params();
  AdamState adam(0.05);
  std::vector<Mat> grads = {Mat::Zero(2, 2), Mat::Zero(1, 2)};
  adam.step(net, grads);
  CHECK((net.flat_params() - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam updates are antisymmetric in the gradient sign") {
  Network net({LayerSpec::dense(1, 2)}, 1);
  net.layer(0).W.setZero();
  Mat g(2, 1);
  g << 0.7, -0.7;
  AdamState adam(0.01);
  adam.step(net, {g, Mat::Zero(1, 2)});
  CHECK(net.layer(0).W(0, 0) == doctest::Approx(-net.layer(0).W(1, 0)).epsilon(1e-12));
}

TEST_CASE("identical seeds give identical parameters and trajectories") {
  auto make = [] { return Network({LayerSpec::dense(3, 4, Activation::Relu),
                                   LayerSpec::dense(4, 3)}, 123); };
  Network a = make();
  Network b = make();
  CHECK(a.flat_params() == b.flat_params());

  Mat X = Mat::Random(8, 3);
  AdamState oa(0.01), ob(0.01);
  for (int step = 0; step < 5; ++step) {
    Tape ta, tb;
    auto fa = a.forward(ta, X, Mode::Train);
    auto fb = b.forward(tb, X, Mode::Train);
    Var la = ta.mean_all(ta.square(fa.output));
    Var lb = tb.mean_all(tb.square(fb.output));
    ta.backward(la);
    tb.backward(lb);
    oa.step(a, collect_gradients(ta, fa));
    ob.step(b, collect_gradients(tb, fb));
  }
  CHECK(a.flat_params() == b.flat_params());
}

TEST_CASE("backward on a stale tape throws after a parameter update") {
  Network net({LayerSpec::dense(2, 2)}, 9);
  Mat X = Mat::Random(4, 2);
  Tape t;
  auto fp = net.forward(t, X, Mode::Train);
  AdamState adam(0.01);
  adam.step(net, {Mat::Ones(2, 2), Mat::Ones(1, 2)});
  CHECK_THROWS_WITH_AS(backward(t, fp, Mat::Ones(4, 2)),
                       "tape reuse after parameter mutation", Error);
}

TEST_CASE("network serialization round trip preserves the eval map") {
  auto masks = made_masks(3, {5}, 2, MadeOrder::Natural, 2);
  Network net({LayerSpec::masked(masks[0], Activation::Tanh), LayerSpec::masked(masks[1]),
               LayerSpec::batchnorm(6)},
              77);
  // perturb running stats so they are not the defaults
  Tape t;
  net.forward(t, Mat::Random(12, 3), Mode::Train);

  Network back = Network::from_json(net.to_json());
  Mat X = Mat::Random(6, 3);
  CHECK((back.eval(X) - net.eval(X)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dimension mismatch is rejected") {
  Network net({LayerSpec::dense(3, 2)}, 0);
  CHECK_THROWS_AS(net.eval(Mat::Random(2, 4)), Error);
  Tape t;
  CHECK_THROWS_AS(net.forward(t, Mat::Random(2, 4), Mode::Eval), Error);
}
