#pragma once

// Synthetic linear-mixing scenes: a few smooth endmember spectra mixed by
// smooth, sum-to-one abundance maps.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ddpmfus/cube.hpp"
#include "ddpmfus/errors.hpp"

namespace ddpmfus {

struct SyntheticSpec {
  std::size_t bands = 8;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t endmembers = 3;
  std::size_t blobs_per_map = 4;
  double blob_sigma_min = 3.0;  // pixels
  double blob_sigma_max = 8.0;
};

/// Endmember spectra in [0.05, 0.95], each a sum of Gaussian bumps over the
/// band axis.
inline std::vector<std::vector<double>> random_endmembers(const SyntheticSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> e(spec.endmembers, std::vector<double>(spec.bands));
  const double span = static_cast<double>(std::max<std::size_t>(spec.bands - 1, 1));
  for (auto& s : e) {
    const double base = 0.1 + 0.3 * u(rng);
    std::vector<double> centre(2), width(2), amp(2);
    for (int k = 0; k < 2; ++k) {
      centre[k] = u(rng) * span;
      width[k] = 0.15 * span + 0.35 * span * u(rng);
      amp[k] = -0.3 + 0.8 * u(rng);
    }
    for (std::size_t b = 0; b < spec.bands; ++b) {
      double v = base;
      for (int k = 0; k < 2; ++k) v += amp[k] * std::exp(-0.5 * std::pow((b - centre[k]) / width[k], 2));
      s[b] = std::clamp(v, 0.05, 0.95);
    }
  }
  return e;
}

/// One scene mixing the given endmembers with fresh abundance maps.
inline HsiCube synthetic_scene(const SyntheticSpec& spec, const std::vector<std::vector<double>>& endmembers,
                               std::mt19937_64& rng) {
  if (endmembers.empty() || endmembers.front().size() != spec.bands)
    throw ParameterError("synthetic_scene: endmember spectra must have one value per band");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t k = endmembers.size(), plane = spec.height * spec.width;
  std::vector<double> field(k * plane, 0.0);
  for (std::size_t m = 0; m < k; ++m) {
    for (std::size_t j = 0; j < spec.blobs_per_map; ++j) {
      const double cy = u(rng) * spec.height, cx = u(rng) * spec.width;
      const double sg = spec.blob_sigma_min + (spec.blob_sigma_max - spec.blob_sigma_min) * u(rng);
      const double amp = 0.5 + 2.0 * u(rng);
      for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          field[m * plane + y * spec.width + x] += amp * std::exp(-0.5 * d2 / (sg * sg));
        }
    }
  }
  HsiCube cube(spec.bands, spec.height, spec.width);
  for (std::size_t p = 0; p < plane; ++p) {
    double total = 0.0;
    std::vector<double> a(k);
    for (std::size_t m = 0; m < k; ++m) total += (a[m] = 0.05 + field[m * plane + p]);
    for (std::size_t b = 0; b < spec.bands; ++b) {
      double v = 0.0;
      for (std::size_t m = 0; m < k; ++m) v += a[m] / total * endmembers[m][b];
      cube.data[b * plane + p] = static_cast<float>(v);
    }
  }
  return cube;
}

/// `count` scenes sharing one set of endmembers.
inline std::vector<HsiCube> synthetic_dataset(const SyntheticSpec& spec, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto e = random_endmembers(spec, rng);
  std::vector<HsiCube> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_scene(spec, e, rng));
  return out;
}

}  // namespace ddpmfus
