#include <doctest.h>

#include "oodtk/nn/tape.hpp"

using namespace oodtk;
using namespace oodtk::nn;

TEST_CASE("linear layer forward and backward") {
  Tape t;
  Mat X(2, 3);
  X << 1, 2, 3, 4, 5, 6;
  Mat W(2, 3);
  W << 1, 0, 0, 0, 1, 0;
  Mat b(1, 2);
  b << 10, 20;
  Var xv = t.leaf(X), wv = t.leaf(W), bv = t.leaf(b);
  Var y = t.linear(xv, wv, bv);
  CHECK(t.value(y)(0, 0) == 11);
  CHECK(t.value(y)(0, 1) == 22);
  CHECK(t.value(y)(1, 0) == 14);

  t.backward(y, Mat::Ones(2, 2));
  // dW = g^T X; with g = ones, each row of dW is the column sums of X
  CHECK(t.grad(wv)(0, 0) == 5);
  CHECK(t.grad(wv)(0, 2) == 9);
  CHECK(t.grad(bv)(0, 0) == 2);
  // dX = g W
  CHECK(t.grad(xv)(0, 0) == 1);
  CHECK(t.grad(xv)(0, 1) == 1);
  CHECK(t.grad(xv)(0, 2) == 0);
}

TEST_CASE("scalar product gradient: d(w*x)/dw = x") {
  Tape t;
  Mat x(1, 1), w(1, 1), b(1, 1);
  x << 3.5;
  w << 2.0;
  b << 0.0;
  Var xv = t.leaf(x), wv = t.leaf(w), bv = t.leaf(b);
  Var y = t.linear(xv, wv, bv);
  t.backward(y, Mat::Ones(1, 1));
  CHECK(t.grad(wv)(0, 0) == 3.5);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Tape t;
  Mat x = Mat::Random(4, 3), w = Mat::Random(2, 3), b = Mat::Random(1, 2);
  Var xv = t.leaf(x), wv = t.leaf(w), bv = t.leaf(b);
  Var y = t.tanh(t.linear(xv, wv, bv));
  t.backward(y, Mat::Zero(4, 2));
  CHECK(t.grad(wv).isZero(0));
  CHECK(t.grad(bv).isZero(0));
  CHECK(t.grad(xv).isZero(0));
}

TEST_CASE("elementwise op gradients agree with hand calculus") {
  Tape t;
  Mat x(1, 3);
  x << 0.5, -1.0, 2.0;
  Var xv = t.leaf(x);
  // y = sum(exp(x)^2) => dy/dx = 2 exp(2x)
  Var y = t.sum_all(t.square(t.exp(xv)));
  t.backward(y);
  for (int j = 0; j < 3; ++j) {
    CHECK(t.grad(xv)(0, j) == doctest::Approx(2.0 * std::exp(2.0 * x(0, j))).epsilon(1e-12));
  }
}

TEST_CASE("clamp passes gradient inside the window only") {
  Tape t;
  Mat x(1, 3);
  x << -9.0, 0.5, 9.0;
  Var xv = t.leaf(x);
  Var y = t.sum_all(t.clamp(xv, -7.0, 7.0));
  CHECK(t.value(y)(0, 0) == doctest::Approx(-7.0 + 0.5 + 7.0));
  t.backward(y);
  CHECK(t.grad(xv)(0, 0) == 0.0);
  CHECK(t.grad(xv)(0, 1) == 1.0);
  CHECK(t.grad(xv)(0, 2) == 0.0);
}

TEST_CASE("row_sum, mean_all and slice_cols route gradients correctly") {
  Tape t;
  Mat x(2, 4);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  Var xv = t.leaf(x);
  Var s = t.slice_cols(xv, 1, 2);  // columns 1..2
  Var r = t.row_sum(s);
  Var m = t.mean_all(r);
  CHECK(t.value(m)(0, 0) == doctest::Approx((2 + 3 + 6 + 7) / 2.0));
  t.backward(m);
  CHECK(t.grad(xv)(0, 0) == 0.0);
  CHECK(t.grad(xv)(0, 1) == doctest::Approx(0.5));
  CHECK(t.grad(xv)(1, 2) == doctest::Approx(0.5));
  CHECK(t.grad(xv)(1, 3) == 0.0);
}

TEST_CASE("reverse_cols is an involution with matching gradient") {
  Tape t;
  Mat x(1, 3);
  x << 1, 2, 3;
  Var xv = t.leaf(x);
  Var y = t.reverse_cols(xv);
  CHECK(t.value(y)(0, 0) == 3);
  Mat seed(1, 3);
  seed << 10, 20, 30;
  t.backward(y, seed);
  CHECK(t.grad(xv)(0, 0) == 30);
  CHECK(t.grad(xv)(0, 2) == 10);
}

TEST_CASE("train-mode batchnorm normalizes a column to mean 0 variance 1") {
  Tape t;
  Mat x(3, 1);
  x << 1, 2, 3;
  Var xv = t.leaf(x);
  Var gamma = t.leaf(Mat::Ones(1, 1));
  Var beta = t.leaf(Mat::Zero(1, 1));
  auto out = t.batchnorm_train(xv, gamma, beta, 0.0);
  const Mat& y = t.value(out.y);
  CHECK(y.col(0).mean() == doctest::Approx(0.0).epsilon(1e-12));
  const double var = (y.col(0).array() - y.col(0).mean()).square().sum() / 3.0;
  CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.batch_mean(0, 0) == doctest::Approx(2.0));
  CHECK(t.value(out.batch_var)(0, 0) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("a second backward on the same tape throws") {
  Tape t;
  Var x = t.leaf(Mat::Ones(1, 1));
  Var y = t.scale(x, 2.0);
  t.backward(y);
  CHECK_THROWS_AS(t.backward(y), Error);
}
