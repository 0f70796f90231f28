#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace ddpmfus;
using ddpmfus::testing::max_abs_diff;
using ddpmfus::testing::random_tensor;
using TD = Tensor<double>;

TEST(QSample, ZeroNoiseScalesSignal) {
  std::mt19937_64 rng(1);
  const auto s = linear_schedule(100, 0.02);
  auto x0 = random_tensor({2, 3, 3}, rng);
  auto xt = q_sample(x0, 40, TD(x0.shape(), 0.0), s);
  for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_DOUBLE_EQ(xt[i], std::sqrt(s.alpha_bar(40)) * x0[i]);
}

TEST(QSample, QuarterAlphaBarArithmetic) {
  const NoiseSchedule s({0.75});
  auto xt = q_sample(TD(Shape{4}, 1.0), 1, TD(Shape{4}, 1.0), s);
  for (double v : xt.data()) EXPECT_NEAR(v, 0.5 + 0.8660254037844386, 1e-15);
}

TEST(QSample, ShapeMismatch) {
  const auto s = linear_schedule(10, 0.1);
  EXPECT_THROW(q_sample(TD(Shape{2, 2}), 1, TD(Shape{4}), s), DimensionError);
}

TEST(QSample, InvariantRecheck) {
  std::mt19937_64 rng(2);
  const auto s = linear_schedule(200, 0.01);
  auto x0 = random_tensor({3, 4, 4}, rng);
  auto eps = gaussian_like<double>(x0.shape(), rng);
  for (int t : {1, 57, 200}) {
    auto xt = q_sample(x0, t, eps, s);
    for (std::size_t i = 0; i < xt.numel(); ++i)
      EXPECT_NEAR(xt[i], std::sqrt(s.alpha_bar(t)) * x0[i] + std::sqrt(1 - s.alpha_bar(t)) * eps[i], 1e-12);
  }
}

TEST(StepwiseKernel, ComposedCoefficientsMatchMarginal) {
  const auto s = linear_schedule(2000, 0.01);
  double signal = 1.0, var = 0.0;
  for (int t = 1; t <= 2000; ++t) {
    const double b = s.beta(t);
    signal *= std::sqrt(1 - b);
    var = (1 - b) * var + b;
    const auto c = marginal_coeffs(s, t);
    ASSERT_NEAR(signal, c.signal, 1e-12 * c.signal) << "t=" << t;
    ASSERT_NEAR(var, c.noise * c.noise, 1e-12) << "t=" << t;
  }
}

TEST(StepwiseKernel, MonteCarloMatchesMarginal) {
  const std::size_t n = 10000;
  const auto s = linear_schedule(100, 0.05);
  std::mt19937_64 rng(3);
  const double x0 = 0.7;
  for (int t : {1, 10, 100}) {
    TD x(Shape{n}, x0);
    for (int k = 1; k <= t; ++k) x = q_step(x, k, gaussian_like<double>(x.shape(), rng), s);
    double m = 0, v = 0;
    for (double a : x.data()) m += a;
    m /= n;
    for (double a : x.data()) v += (a - m) * (a - m);
    v /= n - 1;
    const auto c = marginal_coeffs(s, t);
    const double sd = c.noise, se_mean = sd / std::sqrt(double(n)), se_sd = sd / std::sqrt(2.0 * n);
    EXPECT_LT(std::abs(m - c.signal * x0), 4 * se_mean) << "t=" << t;
    EXPECT_LT(std::abs(std::sqrt(v) - sd), 4 * se_sd) << "t=" << t;
  }
}

TEST(PosteriorMean, FirstStepReturnsX0) {
  std::mt19937_64 rng(4);
  const auto s = linear_schedule(50, 0.1);
  auto x0 = random_tensor({2, 2, 2}, rng), xt = random_tensor({2, 2, 2}, rng);
  auto m = posterior_mean(xt, x0, 1, s);
  for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_NEAR(m[i], x0[i], 1e-12);
}

TEST(PosteriorMean, NoiselessSubstitution) {
  std::mt19937_64 rng(5);
  const auto s = linear_schedule(50, 0.1);
  auto x0 = random_tensor({3, 3}, rng);
  for (int t : {2, 20, 50}) {
    auto xt = q_sample(x0, t, TD(x0.shape(), 0.0), s);
    auto m = posterior_mean(xt, x0, t, s);
    for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_NEAR(m[i], std::sqrt(s.alpha_bar(t - 1)) * x0[i], 1e-6);
  }
}

TEST(PosteriorMean, ShapeMismatch) {
  const auto s = linear_schedule(10, 0.1);
  EXPECT_THROW(posterior_mean(TD(Shape{2}), TD(Shape{3}), 2, s), DimensionError);
  EXPECT_THROW(posterior_mean_from_eps(TD(Shape{2}), TD(Shape{3}), 2, s), DimensionError);
}

TEST(PosteriorMeanFromEps, ZeroNoise) {
  std::mt19937_64 rng(6);
  const auto s = linear_schedule(50, 0.1);
  auto xt = random_tensor({4}, rng);
  auto m = posterior_mean_from_eps(xt, TD(xt.shape(), 0.0), 7, s);
  for (std::size_t i = 0; i < xt.numel(); ++i) EXPECT_DOUBLE_EQ(m[i], xt[i] / std::sqrt(1 - s.beta(7)));
}

TEST(PosteriorMeanFromEps, FirstStepWithTrueNoiseRecoversX0) {
  std::mt19937_64 rng(7);
  const auto s = linear_schedule(2000, 0.01);
  auto x0 = random_tensor({3, 4, 4}, rng);
  auto eps = gaussian_like<double>(x0.shape(), rng);
  auto m = posterior_mean_from_eps(q_sample(x0, 1, eps, s), eps, 1, s);
  EXPECT_LT(max_abs_diff(m, x0), 1e-6);
}

TEST(PosteriorMeanFromEps, AgreesWithX0FormEverywhere) {
  std::mt19937_64 rng(8);
  const auto s = linear_schedule(200, 0.01);
  auto x0 = random_tensor({2, 5, 5}, rng);
  for (int t = 1; t <= 200; ++t) {
    auto eps = gaussian_like<double>(x0.shape(), rng);
    auto xt = q_sample(x0, t, eps, s);
    ASSERT_LT(max_abs_diff(posterior_mean(xt, x0, t, s), posterior_mean_from_eps(xt, eps, t, s)), 1e-6) << t;
  }
}

TEST(SimpleLoss, ClosedForms) {
  std::mt19937_64 rng(9);
  auto e = random_tensor({3, 3}, rng);
  EXPECT_EQ(simple_loss(e, e, 1).item(), 0.0);
  EXPECT_EQ(simple_loss(e, e, 2).item(), 0.0);
  TD zero(Shape{3, 3}, 0.0), c(Shape{3, 3}, -0.6);
  EXPECT_NEAR(simple_loss(zero, c, 1).item(), 0.6, 1e-15);
  EXPECT_NEAR(simple_loss(zero, c, 2).item(), 0.36, 1e-15);
  EXPECT_THROW(simple_loss(zero, c, 3), ParameterError);
}

TEST(StepKl, MatchingMeansGiveZero) {
  std::mt19937_64 rng(10);
  const auto s = linear_schedule(50, 0.1);
  auto x0 = random_tensor({6}, rng), xt = random_tensor({6}, rng);
  EXPECT_EQ(step_kl(xt, x0, posterior_mean(xt, x0, 9, s), 9, s), 0.0);
  EXPECT_THROW(step_kl(xt, x0, xt, 1, s), ParameterError);
}

TEST(StepKl, EqualsEpsSpaceQuadraticForm) {
  std::mt19937_64 rng(11);
  const auto s = linear_schedule(200, 0.01);
  for (int t : {2, 3, 50, 123, 200}) {
    auto x0 = random_tensor({2, 4, 4}, rng);
    auto eps = gaussian_like<double>(x0.shape(), rng);
    auto eps_hat = gaussian_like<double>(x0.shape(), rng);
    auto xt = q_sample(x0, t, eps, s);
    const double kl = step_kl(xt, x0, posterior_mean_from_eps(xt, eps_hat, t, s), t, s);
    double sq = 0;
    for (std::size_t i = 0; i < eps.numel(); ++i) sq += (eps[i] - eps_hat[i]) * (eps[i] - eps_hat[i]);
    const double quad = eps_kl_weight(s, t) * sq;
    EXPECT_NEAR(kl, quad, 1e-6 * std::max(1.0, quad)) << "t=" << t;
  }
}
