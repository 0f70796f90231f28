#include <gtest/gtest.h>

#include <numbers>

#include "test_support.hpp"

using namespace ddpmfus;
using ddpmfus::testing::random_cube;

namespace {

// Cubes on the 8-bit scale directly so offsets are exact.
HsiCube byte_cube(std::size_t b, std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = 10, double hi = 240) {
  auto c = random_cube(b, h, w, rng, lo, hi);
  c.range_lo = 0.0f;
  c.range_hi = 255.0f;
  return c;
}

double naive_sam(const HsiCube& r, const HsiCube& e) {
  double total = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < r.height; ++y)
    for (std::size_t x = 0; x < r.width; ++x) {
      double dot = 0, a = 0, b = 0;
      for (std::size_t k = 0; k < r.bands; ++k) {
        dot += double(r.at(k, y, x)) * e.at(k, y, x);
        a += double(r.at(k, y, x)) * r.at(k, y, x);
        b += double(e.at(k, y, x)) * e.at(k, y, x);
      }
      if (a == 0 || b == 0) continue;
      total += std::acos(std::clamp(dot / std::sqrt(a * b), -1.0, 1.0));
      ++n;
    }
  return total / n;
}

double naive_ergas(const HsiCube& r, const HsiCube& e, int scale) {
  double acc = 0;
  for (std::size_t k = 0; k < r.bands; ++k) {
    double se = 0, mu = 0;
    for (std::size_t y = 0; y < r.height; ++y)
      for (std::size_t x = 0; x < r.width; ++x) {
        const double d = double(r.at(k, y, x)) - e.at(k, y, x);
        se += d * d;
        mu += r.at(k, y, x);
      }
    const double n = double(r.height * r.width);
    acc += (se / n) / ((mu / n) * (mu / n));
  }
  return 100.0 / scale * std::sqrt(acc / r.bands);
}

}  // namespace

TEST(Psnr, IdenticalIsInfinite) {
  std::mt19937_64 rng(1);
  const auto a = random_cube(3, 8, 8, rng);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
}

TEST(Psnr, UnitOffset) {
  std::mt19937_64 rng(2);
  const auto a = byte_cube(4, 16, 16, rng);
  auto b = a;
  for (auto& v : b.data) v += 1.0f;
  EXPECT_NEAR(psnr(a, b), 48.13, 0.01);
  EXPECT_NEAR(psnr(a, b), 20 * std::log10(255.0), 1e-6);
}

TEST(Psnr, ShapeMismatch) {
  EXPECT_THROW(psnr(HsiCube(1, 2, 2), HsiCube(1, 2, 3)), DimensionError);
}

TEST(Sam, IdealAndScaleInvariant) {
  std::mt19937_64 rng(3);
  const auto a = byte_cube(5, 6, 6, rng);
  EXPECT_EQ(sam(a, a).radians, 0.0);
  auto b = a;
  for (auto& v : b.data) v *= 0.5f;
  EXPECT_NEAR(sam(a, b).radians, 0.0, 1e-7);
  // Per-pixel positive scaling.
  auto c = a;
  for (std::size_t p = 0; p < 36; ++p)
    for (std::size_t k = 0; k < 5; ++k) c.data[k * 36 + p] *= 0.2f + 0.03f * static_cast<float>(p);
  EXPECT_NEAR(sam(a, c).radians, 0.0, 1e-7);
}

TEST(Sam, OrthogonalSpectra) {
  HsiCube a(2, 1, 1, std::vector<float>{1, 0}), b(2, 1, 1, std::vector<float>{0, 1});
  EXPECT_EQ(sam(a, b).radians, std::numbers::pi / 2);
}

TEST(Sam, MatchesNaiveOracle) {
  std::mt19937_64 rng(4);
  const auto a = byte_cube(6, 9, 7, rng), b = byte_cube(6, 9, 7, rng);
  EXPECT_NEAR(sam(a, b).radians, naive_sam(a, b), 1e-8);
}

TEST(Sam, ZeroNormPixelsSkipped) {
  HsiCube a(2, 1, 2, std::vector<float>{0, 1, 0, 1}), b(2, 1, 2, std::vector<float>{0, 1, 0, 1});
  const auto r = sam(a, b);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_DOUBLE_EQ(r.skipped_fraction(), 0.5);
}

TEST(Ergas, IdealAndOracle) {
  std::mt19937_64 rng(5);
  const auto a = byte_cube(6, 9, 7, rng), b = byte_cube(6, 9, 7, rng);
  EXPECT_EQ(ergas(a, a, 32).value, 0.0);
  EXPECT_NEAR(ergas(a, b, 32).value, naive_ergas(a, b, 32), 1e-8);
  EXPECT_NEAR(ergas(a, b, 4).value, naive_ergas(a, b, 4), 1e-8);
}

TEST(Ergas, SingleBandClosedForm) {
  HsiCube ref(1, 2, 2, 100.0f), est(1, 2, 2, std::vector<float>{103, 97, 103, 97});
  ref.range_hi = est.range_hi = 255.0f;
  EXPECT_NEAR(ergas(ref, est, 8).value, 100.0 / 8 * 3.0 / 100.0, 1e-12);
}

TEST(Ergas, ZeroMeanBandExcluded) {
  HsiCube ref(2, 2, 2, std::vector<float>{0, 0, 0, 0, 0.5f, 0.5f, 0.5f, 0.5f});
  HsiCube est(2, 2, 2, std::vector<float>{0.1f, 0, 0, 0, 0.5f, 0.5f, 0.5f, 0.6f});
  const auto r = ergas(ref, est, 4);
  EXPECT_EQ(r.excluded_bands, std::vector<std::size_t>{0});
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_GT(r.value, 0.0);
}

TEST(Ssim, IdealValue) {
  std::mt19937_64 rng(6);
  const auto a = random_cube(3, 12, 10, rng);
  EXPECT_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, InvertedImageScoresBelowOne) {
  std::mt19937_64 rng(7);
  const auto a = byte_cube(2, 10, 10, rng, 0, 255);
  auto b = a;
  for (auto& v : b.data) v = 255.0f - v;
  EXPECT_LT(ssim(a, b), 1.0);
}

TEST(Ssim, ConstantImagesReduceToLuminance) {
  HsiCube a(1, 8, 8, 50.0f), b(1, 8, 8, 200.0f);
  a.range_hi = b.range_hi = 255.0f;
  const double c1 = std::pow(0.01 * 255, 2);
  EXPECT_NEAR(ssim(a, b), (2 * 50.0 * 200 + c1) / (50.0 * 50 + 200.0 * 200 + c1), 1e-6);
}

TEST(Ssim, TooSmall) { EXPECT_THROW(ssim(HsiCube(1, 7, 9), HsiCube(1, 7, 9)), DimensionError); }

TEST(BandRmse, ZerosAndBandIndependence) {
  std::mt19937_64 rng(8);
  const auto a = random_cube(4, 5, 5, rng);
  for (double v : band_rmse(a, a)) EXPECT_EQ(v, 0.0);
  auto b = a;
  b.data[3] += 0.1f;
  const auto r = band_rmse(a, b);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_GT(r[0], 0.0);
  for (std::size_t k = 1; k < 4; ++k) EXPECT_EQ(r[k], 0.0);
}

TEST(Report, AveragesAreArithmeticMeans) {
  std::mt19937_64 rng(9);
  std::vector<ImageScores> s;
  for (int i = 0; i < 3; ++i) {
    const auto a = random_cube(3, 8, 8, rng, 0.1, 0.9), b = random_cube(3, 8, 8, rng, 0.1, 0.9);
    s.push_back(evaluate("img" + std::to_string(i), a, b, 8));
  }
  const auto rep = make_report(s, 8);
  double psnr_mean = 0, ssim_mean = 0, rmse0 = 0;
  for (const auto& x : s) {
    psnr_mean += x.psnr / 3;
    ssim_mean += x.ssim / 3;
    rmse0 += x.band_rmse[0] / 3;
  }
  EXPECT_NEAR(rep.average.psnr, psnr_mean, 1e-12);
  EXPECT_NEAR(rep.average.ssim, ssim_mean, 1e-12);
  EXPECT_NEAR(rep.average.band_rmse[0], rmse0, 1e-12);
  EXPECT_EQ(rep.average.band_rmse.size(), 3u);
}
