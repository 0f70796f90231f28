#include <gtest/gtest.h>

#include <cmath>

#include "ddpmfus/schedule.hpp"

using namespace ddpmfus;

TEST(LinearSchedule, EndpointsAtPaperScale) {
  const auto s = linear_schedule(2000, 0.01);
  EXPECT_EQ(s.steps(), 2000);
  EXPECT_NEAR(s.beta(1), 5e-6, 1e-18);
  EXPECT_NEAR(s.beta(2000), 0.01, 1e-18);
}

TEST(LinearSchedule, SingleStep) {
  const auto s = linear_schedule(1, 0.5);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.5);
  EXPECT_EQ(s.posterior_variance(1), 0.0);
}

TEST(LinearSchedule, AlphaBarMatchesDirectProduct) {
  const auto s = linear_schedule(2000, 0.01);
  double prod = 1.0;
  for (int t = 1; t <= 2000; ++t) prod *= 1.0 - 0.01 * t / 2000.0;
  EXPECT_EQ(s.alpha_bar(2000), prod);
  EXPECT_GT(s.alpha_bar(2000), std::exp(-11.0));
  EXPECT_LT(s.alpha_bar(2000), std::exp(-9.0));
}

TEST(LinearSchedule, Validation) {
  EXPECT_THROW(linear_schedule(10, 1.0), ParameterError);
  EXPECT_THROW(linear_schedule(10, 0.0), ParameterError);
  EXPECT_THROW(linear_schedule(0, 0.01), ParameterError);
}

TEST(NoiseSchedule, Invariants) {
  for (auto [T, be] : {std::pair{2000, 0.01}, std::pair{200, 0.01}, std::pair{50, 0.2}}) {
    const auto s = linear_schedule(T, be);
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    for (int t = 1; t <= T; ++t) {
      EXPECT_GT(s.beta(t), 0.0);
      EXPECT_LT(s.beta(t), 1.0);
      if (t > 1) {
        EXPECT_GE(s.beta(t), s.beta(t - 1));
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
      }
      EXPECT_GE(s.posterior_variance(t), 0.0);
      EXPECT_LE(s.posterior_variance(t), s.beta(t));
      EXPECT_NEAR(s.posterior_variance(t),
                  (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t), 1e-15);
    }
  }
}

TEST(NoiseSchedule, OutOfRangeIndex) {
  const auto s = linear_schedule(10, 0.1);
  EXPECT_THROW(s.beta(0), IndexError);
  EXPECT_THROW(s.beta(11), IndexError);
  EXPECT_THROW(s.alpha_bar(-1), IndexError);
  EXPECT_THROW(marginal_coeffs(s, 11), IndexError);
  EXPECT_THROW(posterior_coeffs(s, 0), IndexError);
}

TEST(MarginalCoeffs, QuarterAlphaBar) {
  const NoiseSchedule s({0.75});
  const auto c = marginal_coeffs(s, 1);
  EXPECT_DOUBLE_EQ(c.signal, 0.5);
  EXPECT_DOUBLE_EQ(c.noise, std::sqrt(0.75));
}

TEST(MarginalCoeffs, FirstStepAtPaperScale) {
  const auto c = marginal_coeffs(linear_schedule(2000, 0.01), 1);
  EXPECT_NEAR(c.signal, 0.9999975, 1e-9);
  EXPECT_NEAR(c.noise, 0.002236, 1e-6);
}

TEST(PosteriorCoeffs, CollapseAtFirstStep) {
  const auto c = posterior_coeffs(linear_schedule(100, 0.02), 1);
  EXPECT_EQ(c.coef_xt, 0.0);
  EXPECT_NEAR(c.coef_x0, 1.0, 1e-12);  // beta_1 / (1 - (1 - beta_1)) cancels
  EXPECT_EQ(c.variance, 0.0);
}

TEST(PosteriorCoeffs, MatchBayesCompletingTheSquare) {
  // q(x1 | x2, x0) ∝ N(x1; a x0, b1) N(x2; c x1, b2)
  const double b1 = 0.1, b2 = 0.2, a = std::sqrt(1 - b1), c = std::sqrt(1 - b2);
  const double precision = 1.0 / b1 + c * c / b2;
  const NoiseSchedule s({b1, b2});
  const auto p = posterior_coeffs(s, 2);
  EXPECT_NEAR(p.variance, 1.0 / precision, 1e-15);
  EXPECT_NEAR(p.coef_x0, a / b1 / precision, 1e-15);
  EXPECT_NEAR(p.coef_xt, c / b2 / precision, 1e-15);
}
