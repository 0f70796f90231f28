#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ddpmfus/errors.hpp"
#include "ddpmfus/tensor.hpp"

namespace ddpmfus {

/// A band-sequential image cube (bands x height x width) in 32-bit floats.
struct HsiCube {
  std::size_t bands = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;
  float range_lo = 0.0f;
  float range_hi = 1.0f;
  std::vector<double> wavelengths_nm;  // optional band centres

  HsiCube() = default;
  HsiCube(std::size_t b, std::size_t h, std::size_t w, float fill = 0.0f)
      : bands(b), height(h), width(w), data(b * h * w, fill) {}
  HsiCube(std::size_t b, std::size_t h, std::size_t w, std::vector<float> values)
      : bands(b), height(h), width(w), data(std::move(values)) {
    if (data.size() != b * h * w)
      throw DimensionError("cube " + std::to_string(b) + "x" + std::to_string(h) + "x" +
                           std::to_string(w) + " needs " + std::to_string(b * h * w) + " values, got " +
                           std::to_string(data.size()));
  }

  std::size_t plane() const { return height * width; }
  float& at(std::size_t b, std::size_t y, std::size_t x) { return data[(b * height + y) * width + x]; }
  float at(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * height + y) * width + x]; }

  bool same_shape(const HsiCube& o) const { return bands == o.bands && height == o.height && width == o.width; }
  std::string shape_string() const {
    return std::to_string(bands) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }

  /// Sub-image of all bands at rows [y, y+h), cols [x, x+w).
  HsiCube crop(std::size_t y, std::size_t x, std::size_t h, std::size_t w) const {
    if (y + h > height || x + w > width)
      throw DimensionError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                           std::to_string(y) + "," + std::to_string(x) + ") exceeds " + shape_string());
    HsiCube out(bands, h, w);
    out.range_lo = range_lo;
    out.range_hi = range_hi;
    out.wavelengths_nm = wavelengths_nm;
    for (std::size_t b = 0; b < bands; ++b)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) out.at(b, r, c) = at(b, y + r, x + c);
    return out;
  }
};

template <class T>
Tensor<T> to_tensor(const HsiCube& cube) {
  return Tensor<T>(Shape{cube.bands, cube.height, cube.width}, std::vector<T>(cube.data.begin(), cube.data.end()));
}

template <class T>
HsiCube to_cube(const Tensor<T>& t) {
  if (t.rank() != 3) throw DimensionError("cube conversion needs a [C,H,W] tensor, got " + shape_str(t.shape()));
  HsiCube out(t.dim(0), t.dim(1), t.dim(2));
  for (std::size_t i = 0; i < t.numel(); ++i) out.data[i] = static_cast<float>(t[i]);
  return out;
}

}  // namespace ddpmfus
