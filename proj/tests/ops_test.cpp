#include "comporth/ops.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "comporth/tensor.hpp"

using namespace comporth;

namespace {

// Central finite differences against an analytic gradient; the oracle
// for every kernel below.
double fd_relative_error(Tensor<double>& x, const Tensor<double>& analytic,
                         const std::function<double()>& f, double h = 1e-6) {
  double num = 0, den = 0;
  for (long i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f();
    x[i] = orig - h;
    const double fm = f();
    x[i] = orig;
    const double fd = (fp - fm) / (2 * h);
    num += (analytic[i] - fd) * (analytic[i] - fd);
    den += fd * fd;
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

// Scalar probe L = <R, op(...)> so tensor-valued ops reduce to a scalar.
double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (long i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

constexpr double kTol = 1e-5;

}  // namespace

TEST(OpsTest, Conv2dGradients) {
  auto x = seeded_normal<double>({2, 2, 5, 5}, 1);
  auto w = seeded_normal<double>({3, 2 * 3 * 3}, 2);
  auto b = seeded_normal<double>({3}, 3);
  const auto y0 = conv2d(x, w, b, 3, 1, 1);
  const auto r = seeded_normal<double>(y0.shape, 4);
  auto f = [&] { return dot(r, conv2d(x, w, b, 3, 1, 1)); };

  Tensor<double> gx, gw, gb;
  conv2d_grad(x, w, r, 3, 1, 1, &gx, &gw, &gb);
  EXPECT_LT(fd_relative_error(x, gx, f), kTol);
  EXPECT_LT(fd_relative_error(w, gw, f), kTol);
  EXPECT_LT(fd_relative_error(b, gb, f), kTol);
}

TEST(OpsTest, Conv2dStridedGradients) {
  auto x = seeded_normal<double>({1, 3, 8, 8}, 5);
  auto w = seeded_normal<double>({4, 3 * 4 * 4}, 6);
  auto b = seeded_normal<double>({4}, 7);
  const auto y0 = conv2d(x, w, b, 4, 2, 1);
  ASSERT_EQ(y0.shape, (std::vector<long>{1, 4, 4, 4}));
  const auto r = seeded_normal<double>(y0.shape, 8);
  auto f = [&] { return dot(r, conv2d(x, w, b, 4, 2, 1)); };

  Tensor<double> gx, gw, gb;
  conv2d_grad(x, w, r, 4, 2, 1, &gx, &gw, &gb);
  EXPECT_LT(fd_relative_error(x, gx, f), kTol);
  EXPECT_LT(fd_relative_error(w, gw, f), kTol);
  EXPECT_LT(fd_relative_error(b, gb, f), kTol);
}

TEST(OpsTest, ConvTransposeGradients) {
  auto z = seeded_normal<double>({2, 3, 4, 4}, 11);
  auto w = seeded_normal<double>({3, 2 * 4 * 4}, 12);
  auto b = seeded_normal<double>({2}, 13);
  const auto x0 = conv2d_transpose(z, w, b, 4, 2, 1);
  ASSERT_EQ(x0.shape, (std::vector<long>{2, 2, 8, 8}));
  const auto r = seeded_normal<double>(x0.shape, 14);
  auto f = [&] { return dot(r, conv2d_transpose(z, w, b, 4, 2, 1)); };

  Tensor<double> gz, gw, gb;
  conv2d_transpose_grad(z, w, r, 4, 2, 1, &gz, &gw, &gb);
  EXPECT_LT(fd_relative_error(z, gz, f), kTol);
  EXPECT_LT(fd_relative_error(w, gw, f), kTol);
  EXPECT_LT(fd_relative_error(b, gb, f), kTol);
}

TEST(OpsTest, ConvTransposeIsExactAdjointOfConv) {
  // <conv(x), y> == <x, convT(y)> at 64-bit
  for (const auto& [k, stride, pad] : std::vector<std::tuple<long, long, long>>{
           {3, 1, 1}, {4, 2, 1}, {3, 1, 0}, {5, 2, 2}}) {
    auto x = seeded_normal<double>({2, 3, 9, 9}, 21 + k);
    auto w = seeded_normal<double>({4, 3 * k * k}, 22 + k);
    Tensor<double> no_bias;
    const auto cx = conv2d(x, w, no_bias, k, stride, pad);
    // draw y conv-output shaped, but only exact-tiling geometries round-trip
    const long h_back = (cx.shape[2] - 1) * stride - 2 * pad + k;
    if (h_back != x.shape[2]) continue;
    const auto y = seeded_normal<double>(cx.shape, 23 + k);
    const auto xty = conv2d_transpose(y, w, no_bias, k, stride, pad);
    EXPECT_NEAR(dot(cx, y), dot(x, xty), 1e-10 * std::abs(dot(cx, y)) + 1e-10)
        << "k=" << k << " s=" << stride << " p=" << pad;
  }
}

TEST(OpsTest, DeltaKernelIsIdentity) {
  auto x = seeded_normal<double>({1, 1, 6, 6}, 31);
  Tensor<double> w({1, 9});
  w[4] = 1.0;  // center tap of a 3x3 kernel
  Tensor<double> no_bias;
  const auto y = conv2d(x, w, no_bias, 3, 1, 1);
  ASSERT_EQ(y.shape, x.shape);
  for (long i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(OpsTest, DenseGradients) {
  auto x = seeded_normal<double>({3, 7}, 41);
  auto w = seeded_normal<double>({5, 7}, 42);
  auto b = seeded_normal<double>({5}, 43);
  const auto r = seeded_normal<double>({3, 5}, 44);
  auto f = [&] { return dot(r, dense(x, w, b)); };

  Tensor<double> gx, gw, gb;
  dense_grad(x, w, r, &gx, &gw, &gb);
  EXPECT_LT(fd_relative_error(x, gx, f), kTol);
  EXPECT_LT(fd_relative_error(w, gw, f), kTol);
  EXPECT_LT(fd_relative_error(b, gb, f), kTol);
}

TEST(OpsTest, ActivationGradients) {
  auto x = seeded_normal<double>({4, 6}, 51);
  const auto r = seeded_normal<double>({4, 6}, 52);
  {
    auto f = [&] { return dot(r, relu(x)); };
    EXPECT_LT(fd_relative_error(x, relu_grad(x, r), f), kTol);
  }
  {
    auto f = [&] { return dot(r, sigmoid(x)); };
    EXPECT_LT(fd_relative_error(x, sigmoid_grad(sigmoid(x), r), f), kTol);
  }
  {
    auto f = [&] { return dot(r, softmax(x)); };
    EXPECT_LT(fd_relative_error(x, softmax_grad(softmax(x), r), f), kTol);
  }
}

TEST(OpsTest, SoftmaxRowsSumToOne) {
  auto x = seeded_normal<double>({16, 62}, 61);
  for (long i = 0; i < x.size(); ++i) x[i] *= 20;  // exercise large logits
  const auto y = softmax(x);
  for (long i = 0; i < 16; ++i) {
    double s = 0;
    for (long c = 0; c < 62; ++c) s += y[i * 62 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(OpsTest, BceClosedForm) {
  const long n = 137;
  Tensor<double> pred({n});
  Tensor<double> target({n});
  pred.fill(0.5);
  target.fill(0.5);
  EXPECT_NEAR(bce_sum(pred, target), n * std::log(2.0), 1e-9);
}

TEST(OpsTest, BceGradient) {
  auto x = seeded_normal<double>({3, 4}, 71);
  Tensor<double> pred(x.shape), target(x.shape);
  for (long i = 0; i < x.size(); ++i) {
    pred[i] = 0.1 + 0.8 / (1.0 + std::exp(-x[i]));  // keep away from clamp
    target[i] = (i % 3) / 2.0;
  }
  auto f = [&] { return bce_sum(pred, target); };
  EXPECT_LT(fd_relative_error(pred, bce_sum_grad(pred, target), f), kTol);
}

TEST(OpsTest, FusedSigmoidBceMatchesComposition) {
  auto logits = seeded_normal<double>({2, 8}, 81);
  Tensor<double> target(logits.shape);
  for (long i = 0; i < target.size(); ++i) target[i] = (i % 2) ? 1.0 : 0.0;
  EXPECT_NEAR(sigmoid_bce_sum(logits, target), bce_sum(sigmoid(logits), target), 1e-9);
  auto f = [&] { return sigmoid_bce_sum(logits, target); };
  EXPECT_LT(fd_relative_error(logits, sigmoid_bce_sum_grad(logits, target), f), kTol);
}

TEST(OpsTest, FusedSigmoidBceStableAtExtremeLogits) {
  Tensor<double> logits({2}), target({2});
  logits[0] = 500;
  logits[1] = -500;
  target[0] = 1;
  target[1] = 0;
  EXPECT_NEAR(sigmoid_bce_sum(logits, target), 0.0, 1e-12);
  const auto g = sigmoid_bce_sum_grad(logits, target);
  EXPECT_TRUE(g.all_finite());
}

TEST(OpsTest, SseGradient) {
  auto pred = seeded_normal<double>({3, 5}, 91);
  auto target = seeded_normal<double>({3, 5}, 92);
  auto f = [&] { return sse_sum(pred, target); };
  EXPECT_LT(fd_relative_error(pred, sse_sum_grad(pred, target), f), kTol);
}

TEST(OpsTest, GaussianKlZeroAtStandardNormal) {
  Tensor<double> mu({8});
  Tensor<double> logvar({8});
  EXPECT_DOUBLE_EQ(gaussian_kl(mu, logvar), 0.0);
}

TEST(OpsTest, GaussianKlIsNonNegative) {
  CounterRng rng(101);
  for (int it = 0; it < 200; ++it) {
    auto mu = seeded_normal<double>({16}, 1000 + it);
    auto lv = seeded_normal<double>({16}, 2000 + it);
    EXPECT_GE(gaussian_kl(mu, lv), -1e-12);
  }
}

TEST(OpsTest, GaussianKlGradients) {
  auto mu = seeded_normal<double>({2, 6}, 111);
  auto lv = seeded_normal<double>({2, 6}, 112);
  Tensor<double> gmu, glv;
  gaussian_kl_grad(mu, lv, &gmu, &glv);
  auto f = [&] { return gaussian_kl(mu, lv); };
  EXPECT_LT(fd_relative_error(mu, gmu, f), kTol);
  EXPECT_LT(fd_relative_error(lv, glv, f), kTol);
}

TEST(OpsTest, SoftmaxXentGradient) {
  auto logits = seeded_normal<double>({4, 6}, 121);
  const std::vector<int> labels{0, 3, 5, 2};
  Tensor<double> probs, grad;
  softmax_xent(logits, labels, &probs, &grad);
  auto f = [&] { return softmax_xent<double>(logits, labels, nullptr, nullptr); };
  EXPECT_LT(fd_relative_error(logits, grad, f), kTol);
}

TEST(OpsTest, ShapeMismatchesAreStructuredErrors) {
  auto x = seeded_normal<double>({1, 2, 5, 5}, 131);
  auto w = seeded_normal<double>({3, 99}, 132);
  Tensor<double> no_bias;
  try {
    conv2d(x, w, no_bias, 3, 1, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[3,99]"), std::string::npos);
    EXPECT_NE(msg.find("[1,2,5,5]"), std::string::npos);
  }
  auto a = seeded_normal<double>({2, 3}, 133);
  auto b = seeded_normal<double>({3, 2}, 134);
  EXPECT_THROW(bce_sum(a, b), ShapeError);
  EXPECT_THROW(dense(a, seeded_normal<double>({4, 9}, 135), no_bias), ShapeError);
}
