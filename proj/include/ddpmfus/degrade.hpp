#pragma once

// Linear observation model: block-average spatial decimation (LrHSI) and SRF
// spectral merging (HrMSI), each with optional additive Gaussian noise.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ddpmfus/cube.hpp"
#include "ddpmfus/errors.hpp"

namespace ddpmfus {

/// Row-major l x L spectral response matrix.
struct SrfMatrix {
  std::size_t rows = 0;  // multispectral bands
  std::size_t cols = 0;  // hyperspectral bands
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

/// Scales each row to unit sum. Rows must be non-negative with positive mass.
inline SrfMatrix normalize_rows(SrfMatrix m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (m(r, c) < 0.0 || !std::isfinite(m(r, c)))
        throw LoadError("SRF row " + std::to_string(r + 1) + ", column " + std::to_string(c + 1) +
                        ": response must be finite and non-negative");
      s += m(r, c);
    }
    if (!(s > 0.0)) throw LoadError("SRF row " + std::to_string(r + 1) + " has zero total response");
    for (std::size_t c = 0; c < m.cols; ++c) m(r, c) /= s;
  }
  return m;
}

/// Each output band averages a contiguous group of input bands; groups
/// differ in size by at most one.
inline SrfMatrix uniform_group_srf(std::size_t bands, std::size_t groups) {
  if (groups < 1 || groups > bands) throw ParameterError("uniform_group_srf: need 1 <= groups <= bands");
  SrfMatrix m{groups, bands, std::vector<double>(groups * bands, 0.0)};
  for (std::size_t c = 0; c < bands; ++c) m(c * groups / bands, c) = 1.0;
  return normalize_rows(std::move(m));
}

struct ObservationModel {
  std::size_t block = 32;
  SrfMatrix srf;
  double noise_std_y = 0.0;
  double noise_std_z = 0.0;
};

namespace detail {

inline void add_noise(HsiCube& cube, double std_dev, std::mt19937_64* rng) {
  if (std_dev <= 0.0) return;
  if (!rng) throw ParameterError("noise requested without a random generator");
  std::normal_distribution<double> n(0.0, std_dev);
  for (auto& v : cube.data) v = static_cast<float>(v + n(*rng));
}

}  // namespace detail

/// Y = X B S (+ N_y): unweighted mean of each disjoint block x block tile.
inline HsiCube spatial_degrade(const HsiCube& x, const ObservationModel& model, std::mt19937_64* rng = nullptr) {
  const std::size_t s = model.block;
  if (s < 1) throw ParameterError("spatial_degrade: block must be >= 1");
  if (x.height % s || x.width % s)
    throw DimensionError("spatial_degrade: " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                         " not divisible by block " + std::to_string(s));
  HsiCube y(x.bands, x.height / s, x.width / s);
  y.range_lo = x.range_lo;
  y.range_hi = x.range_hi;
  y.wavelengths_nm = x.wavelengths_nm;
  const double inv = 1.0 / static_cast<double>(s * s);
  for (std::size_t b = 0; b < x.bands; ++b)
    for (std::size_t r = 0; r < y.height; ++r)
      for (std::size_t c = 0; c < y.width; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < s; ++j) acc += x.at(b, r * s + i, c * s + j);
        y.at(b, r, c) = static_cast<float>(acc * inv);
      }
  detail::add_noise(y, model.noise_std_y, rng);
  return y;
}

/// Z = R X (+ N_z): per-pixel product with the SRF matrix.
inline HsiCube spectral_degrade(const HsiCube& x, const ObservationModel& model, std::mt19937_64* rng = nullptr) {
  const auto& r = model.srf;
  if (r.cols != x.bands)
    throw DimensionError("spectral_degrade: SRF has " + std::to_string(r.cols) + " columns, cube has " +
                         std::to_string(x.bands) + " bands");
  HsiCube z(r.rows, x.height, x.width);
  z.range_lo = x.range_lo;
  z.range_hi = x.range_hi;
  const std::size_t plane = x.plane();
  for (std::size_t k = 0; k < r.rows; ++k)
    for (std::size_t p = 0; p < plane; ++p) {
      double acc = 0.0;
      for (std::size_t b = 0; b < x.bands; ++b) acc += r(k, b) * x.data[b * plane + p];
      z.data[k * plane + p] = static_cast<float>(acc);
    }
  detail::add_noise(z, model.noise_std_z, rng);
  return z;
}

namespace detail {

inline std::vector<double> parse_csv_row(const std::string& line, std::size_t row) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  std::size_t col = 0;
  while (std::getline(ss, cell, ',')) {
    ++col;
    std::size_t a = cell.find_first_not_of(" \t\r"), b = cell.find_last_not_of(" \t\r");
    if (a == std::string::npos)
      throw LoadError("SRF table row " + std::to_string(row) + ", column " + std::to_string(col) + ": empty cell");
    cell = cell.substr(a, b - a + 1);
    try {
      std::size_t used = 0;
      double v = std::stod(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      out.push_back(v);
    } catch (const std::exception&) {
      throw LoadError("SRF table row " + std::to_string(row) + ", column " + std::to_string(col) +
                      ": not a number '" + cell + "'");
    }
  }
  return out;
}

}  // namespace detail

/// Reads a comma-separated SRF table: first row holds the hyperspectral band
/// wavelengths (nm), every further row one multispectral band's response.
/// When target wavelengths are given, responses are linearly resampled onto
/// them. Rows come back normalized to unit sum. Lines starting with '#' and
/// blank lines are ignored.
inline SrfMatrix load_srf(const std::string& path, const std::vector<double>& target_wavelengths = {}) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open SRF table '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> line_numbers;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    rows.push_back(detail::parse_csv_row(line, n));
    line_numbers.push_back(n);
  }
  if (rows.size() < 2) throw LoadError("SRF table '" + path + "' needs a wavelength row and at least one response row");
  const auto& wl = rows.front();
  for (std::size_t r = 1; r < rows.size(); ++r)
    if (rows[r].size() != wl.size())
      throw LoadError("SRF table row " + std::to_string(line_numbers[r]) + ": " + std::to_string(rows[r].size()) +
                      " columns, wavelength row has " + std::to_string(wl.size()));
  for (std::size_t r = 1; r < rows.size(); ++r)
    for (std::size_t c = 0; c < wl.size(); ++c)
      if (!(rows[r][c] >= 0.0) || !std::isfinite(rows[r][c]))
        throw LoadError("SRF table row " + std::to_string(line_numbers[r]) + ", column " + std::to_string(c + 1) +
                        ": response must be finite and non-negative");
  for (std::size_t c = 1; c < wl.size(); ++c)
    if (!(wl[c] > wl[c - 1]))
      throw LoadError("SRF table row " + std::to_string(line_numbers[0]) + ", column " + std::to_string(c + 1) +
                      ": wavelengths must be strictly increasing");

  const std::size_t out_bands = rows.size() - 1;
  if (target_wavelengths.empty()) {
    SrfMatrix m{out_bands, wl.size(), {}};
    for (std::size_t r = 1; r < rows.size(); ++r) m.values.insert(m.values.end(), rows[r].begin(), rows[r].end());
    return normalize_rows(std::move(m));
  }

  SrfMatrix m{out_bands, target_wavelengths.size(), std::vector<double>(out_bands * target_wavelengths.size())};
  constexpr double kTol = 1e-9;
  for (std::size_t b = 0; b < target_wavelengths.size(); ++b) {
    const double lam = target_wavelengths[b];
    if (lam < wl.front() - kTol || lam > wl.back() + kTol)
      throw LoadError("SRF table '" + path + "' does not cover band " + std::to_string(b + 1) + " at " +
                      std::to_string(lam) + " nm (table spans " + std::to_string(wl.front()) + "-" +
                      std::to_string(wl.back()) + " nm)");
    std::size_t hi = 0;
    while (hi + 1 < wl.size() && wl[hi] < lam - kTol) ++hi;
    const std::size_t lo = hi == 0 ? 0 : hi - 1;
    const double f = (hi == lo || std::abs(wl[hi] - lam) <= kTol) ? 1.0 : (lam - wl[lo]) / (wl[hi] - wl[lo]);
    for (std::size_t r = 0; r < out_bands; ++r)
      m(r, b) = (1.0 - f) * rows[r + 1][lo] + f * rows[r + 1][hi];
  }
  return normalize_rows(std::move(m));
}

}  // namespace ddpmfus
