#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ddpmfus/ddpmfus.hpp"

namespace ddpmfus::testing {

template <class T = double>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                        bool grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  Tensor<T> t(shape, std::move(v));
  if (grad) t.set_requires_grad(true);
  return t;
}

inline HsiCube random_cube(std::size_t b, std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = 0.0,
                           double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  HsiCube c(b, h, w);
  for (auto& v : c.data) v = static_cast<float>(u(rng));
  return c;
}

/// ||analytic - numeric|| / max(||analytic||, ||numeric||) over all inputs,
/// with central differences of step h.
inline double gradient_error(std::vector<Tensor<double>> inputs,
                             const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                             double h = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  backward(f(inputs));
  double diff = 0.0, na = 0.0, nn = 0.0;
  NoGradGuard no_grad;
  for (auto& t : inputs) {
    const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                      : std::vector<double>(t.numel(), 0.0);
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f(inputs).item();
      data[i] = saved - h;
      const double down = f(inputs).item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / scale;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ddpmfus_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace ddpmfus::testing
