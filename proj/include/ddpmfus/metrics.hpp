#pragma once

// Fusion quality metrics. Both cubes are first rescaled from their value
// range to the 8-bit range [0, 255].

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "ddpmfus/cube.hpp"
#include "ddpmfus/errors.hpp"

namespace ddpmfus {

namespace detail {

inline void require_same(const HsiCube& ref, const HsiCube& est, const char* metric) {
  if (!ref.same_shape(est))
    throw DimensionError(std::string(metric) + ": reference " + ref.shape_string() + " vs estimate " + est.shape_string());
}

inline std::vector<double> to_8bit(const HsiCube& c) {
  const double lo = c.range_lo, span = static_cast<double>(c.range_hi) - c.range_lo;
  if (!(span > 0)) throw ParameterError("cube value range must have hi > lo");
  std::vector<double> v(c.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (c.data[i] - lo) / span * 255.0;
  return v;
}

}  // namespace detail

/// Global PSNR in dB; +infinity for identical cubes.
inline double psnr(const HsiCube& ref, const HsiCube& est) {
  detail::require_same(ref, est, "psnr");
  const auto r = detail::to_8bit(ref), e = detail::to_8bit(est);
  double se = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) se += (r[i] - e[i]) * (r[i] - e[i]);
  const double mse = se / static_cast<double>(r.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

struct SamResult {
  double radians = 0.0;
  std::size_t skipped = 0;  // pixels with a zero-norm spectrum
  std::size_t pixels = 0;
  double degrees() const { return radians * 180.0 / std::numbers::pi; }
  double skipped_fraction() const { return pixels ? static_cast<double>(skipped) / pixels : 0.0; }
};

/// Mean spectral angle over pixels whose spectra both have nonzero norm.
inline SamResult sam(const HsiCube& ref, const HsiCube& est) {
  detail::require_same(ref, est, "sam");
  const auto r = detail::to_8bit(ref), e = detail::to_8bit(est);
  const std::size_t plane = ref.plane();
  SamResult out;
  out.pixels = plane;
  double total = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    double nr = 0.0, ne = 0.0;
    for (std::size_t b = 0; b < ref.bands; ++b) {
      const double a = r[b * plane + p], c = e[b * plane + p];
      nr += a * a;
      ne += c * c;
    }
    if (nr == 0.0 || ne == 0.0) {
      ++out.skipped;
      continue;
    }
    // Half-angle form: exact 0 for parallel spectra, no acos cancellation.
    const double ir = 1.0 / std::sqrt(nr), ie = 1.0 / std::sqrt(ne);
    double diff = 0.0, sum = 0.0;
    for (std::size_t b = 0; b < ref.bands; ++b) {
      const double u = r[b * plane + p] * ir, v = e[b * plane + p] * ie;
      diff += (u - v) * (u - v);
      sum += (u + v) * (u + v);
    }
    total += 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
  }
  const std::size_t used = plane - out.skipped;
  out.radians = used ? total / static_cast<double>(used) : 0.0;
  return out;
}

/// Per-band RMSE in 8-bit units.
inline std::vector<double> band_rmse(const HsiCube& ref, const HsiCube& est) {
  detail::require_same(ref, est, "band_rmse");
  const auto r = detail::to_8bit(ref), e = detail::to_8bit(est);
  const std::size_t plane = ref.plane();
  std::vector<double> out(ref.bands);
  for (std::size_t b = 0; b < ref.bands; ++b) {
    double se = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const double d = r[b * plane + p] - e[b * plane + p];
      se += d * d;
    }
    out[b] = std::sqrt(se / static_cast<double>(plane));
  }
  return out;
}

struct ErgasResult {
  double value = 0.0;
  std::vector<std::size_t> excluded_bands;  // zero reference mean
};

/// (100 / scale) * sqrt(mean_b (RMSE_b / mean_b)^2) over bands with nonzero mean.
inline ErgasResult ergas(const HsiCube& ref, const HsiCube& est, int scale) {
  detail::require_same(ref, est, "ergas");
  if (scale < 1) throw ParameterError("ergas: scale must be >= 1");
  const auto rmse = band_rmse(ref, est);
  const auto r = detail::to_8bit(ref);
  const std::size_t plane = ref.plane();
  ErgasResult out;
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t b = 0; b < ref.bands; ++b) {
    double mu = 0.0;
    for (std::size_t p = 0; p < plane; ++p) mu += r[b * plane + p];
    mu /= static_cast<double>(plane);
    if (mu == 0.0) {
      out.excluded_bands.push_back(b);
      continue;
    }
    acc += (rmse[b] / mu) * (rmse[b] / mu);
    ++used;
  }
  out.value = used ? 100.0 / scale * std::sqrt(acc / static_cast<double>(used)) : 0.0;
  return out;
}

constexpr std::size_t kSsimWindow = 8;

/// Band-averaged mean SSIM over all 8x8 windows (stride 1, uniform weights,
/// population statistics, C1 = (0.01*255)^2, C2 = (0.03*255)^2).
inline double ssim(const HsiCube& ref, const HsiCube& est) {
  detail::require_same(ref, est, "ssim");
  const std::size_t win = kSsimWindow;
  if (ref.height < win || ref.width < win)
    throw DimensionError("ssim: image " + ref.shape_string() + " smaller than the " + std::to_string(win) + "x" +
                         std::to_string(win) + " window");
  const auto r = detail::to_8bit(ref), e = detail::to_8bit(est);
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0), c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const double n = static_cast<double>(win * win);
  const std::size_t h = ref.height, w = ref.width, plane = ref.plane();
  double total = 0.0;
  for (std::size_t b = 0; b < ref.bands; ++b) {
    const double* rb = r.data() + b * plane;
    const double* eb = e.data() + b * plane;
    double band_total = 0.0;
    for (std::size_t y = 0; y + win <= h; ++y)
      for (std::size_t x = 0; x + win <= w; ++x) {
        double sr = 0, se = 0, srr = 0, see = 0, sre = 0;
        for (std::size_t i = 0; i < win; ++i)
          for (std::size_t j = 0; j < win; ++j) {
            const double a = rb[(y + i) * w + x + j], c = eb[(y + i) * w + x + j];
            sr += a;
            se += c;
            srr += a * a;
            see += c * c;
            sre += a * c;
          }
        const double mr = sr / n, me = se / n;
        const double vr = srr / n - mr * mr, ve = see / n - me * me, cov = sre / n - mr * me;
        band_total += ((2 * mr * me + c1) * (2 * cov + c2)) / ((mr * mr + me * me + c1) * (vr + ve + c2));
      }
    total += band_total / static_cast<double>((h - win + 1) * (w - win + 1));
  }
  return total / static_cast<double>(ref.bands);
}

struct ImageScores {
  std::string name;
  double psnr = 0.0;
  double sam_rad = 0.0;
  double sam_deg = 0.0;
  double sam_skipped_fraction = 0.0;
  double ergas = 0.0;
  std::vector<std::size_t> ergas_excluded_bands;
  double ssim = 0.0;
  std::vector<double> band_rmse;
};

struct FusionReport {
  int ergas_scale = 1;
  std::vector<ImageScores> per_image;
  ImageScores average;
};

inline ImageScores evaluate(const std::string& name, const HsiCube& ref, const HsiCube& est, int scale) {
  ImageScores s;
  s.name = name;
  s.psnr = psnr(ref, est);
  const auto angle = sam(ref, est);
  s.sam_rad = angle.radians;
  s.sam_deg = angle.degrees();
  s.sam_skipped_fraction = angle.skipped_fraction();
  const auto eg = ergas(ref, est, scale);
  s.ergas = eg.value;
  s.ergas_excluded_bands = eg.excluded_bands;
  s.ssim = ssim(ref, est);
  s.band_rmse = band_rmse(ref, est);
  return s;
}

/// Arithmetic means of the per-image scores (band RMSE averaged per band).
inline FusionReport make_report(std::vector<ImageScores> images, int scale) {
  FusionReport rep;
  rep.ergas_scale = scale;
  rep.average.name = "average";
  if (!images.empty()) {
    const double n = static_cast<double>(images.size());
    rep.average.band_rmse.assign(images.front().band_rmse.size(), 0.0);
    for (const auto& s : images) {
      rep.average.psnr += s.psnr / n;
      rep.average.sam_rad += s.sam_rad / n;
      rep.average.sam_deg += s.sam_deg / n;
      rep.average.sam_skipped_fraction += s.sam_skipped_fraction / n;
      rep.average.ergas += s.ergas / n;
      rep.average.ssim += s.ssim / n;
      if (s.band_rmse.size() != rep.average.band_rmse.size())
        throw DimensionError("report: images have different band counts");
      for (std::size_t b = 0; b < s.band_rmse.size(); ++b) rep.average.band_rmse[b] += s.band_rmse[b] / n;
    }
  }
  rep.per_image = std::move(images);
  return rep;
}

}  // namespace ddpmfus
