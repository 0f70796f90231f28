#pragma once

// Cube file: one line of JSON header, a newline, then the raw band-major
// payload as little-endian IEEE-754 binary32.
//
//   {"format":"ddpmfus-cube","version":1,"bands":31,"height":512,"width":512,
//    "dtype":"f32","interleave":"band-sequential","byte_order":"little",
//    "value_range":[0,1],"wavelengths_nm":[400,...]}\n<payload>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddpmfus/cube.hpp"
#include "ddpmfus/errors.hpp"

namespace ddpmfus {

inline constexpr int kCubeFormatVersion = 1;

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

inline void write_f32_le(std::ostream& os, const float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u = to_le(std::bit_cast<std::uint32_t>(p[i]));
      os.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
}

inline void read_f32_le(const char* bytes, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u;
    std::memcpy(&u, bytes + 4 * i, 4);
    out[i] = std::bit_cast<float>(to_le(u));
  }
}

template <class V>
V header_field(const nlohmann::json& h, const char* key, const std::string& path) {
  if (!h.contains(key)) throw LoadError("cube '" + path + "': header field '" + key + "' missing");
  try {
    return h.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw LoadError("cube '" + path + "': header field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline std::size_t cube_payload_bytes(std::size_t bands, std::size_t height, std::size_t width) {
  return bands * height * width * sizeof(float);
}

inline std::string cube_header(const HsiCube& cube) {
  nlohmann::json h;
  h["format"] = "ddpmfus-cube";
  h["version"] = kCubeFormatVersion;
  h["bands"] = cube.bands;
  h["height"] = cube.height;
  h["width"] = cube.width;
  h["dtype"] = "f32";
  h["interleave"] = "band-sequential";
  h["byte_order"] = "little";
  h["value_range"] = {cube.range_lo, cube.range_hi};
  if (!cube.wavelengths_nm.empty()) h["wavelengths_nm"] = cube.wavelengths_nm;
  return h.dump();
}

inline void write_cube(const std::string& path, const HsiCube& cube) {
  if (cube.data.size() != cube.bands * cube.height * cube.width)
    throw DimensionError("write_cube: data length does not match " + cube.shape_string());
  for (float v : cube.data)
    if (!std::isfinite(v)) throw ParameterError("write_cube: cube contains non-finite values");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot open '" + path + "' for writing");
  os << cube_header(cube) << '\n';
  detail::write_f32_le(os, cube.data.data(), cube.data.size());
  if (!os) throw LoadError("write to '" + path + "' failed");
}

inline HsiCube read_cube(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open cube '" + path + "'");
  std::string header_line;
  if (!std::getline(is, header_line)) throw LoadError("cube '" + path + "': missing header line");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("cube '" + path + "': header is not valid JSON (" + e.what() + ")");
  }
  if (detail::header_field<std::string>(h, "format", path) != "ddpmfus-cube")
    throw FormatError("cube '" + path + "': header field 'format' is not ddpmfus-cube");
  const int version = detail::header_field<int>(h, "version", path);
  if (version != kCubeFormatVersion)
    throw FormatError("cube '" + path + "': header field 'version' is " + std::to_string(version) + ", reader supports " +
                      std::to_string(kCubeFormatVersion));
  if (detail::header_field<std::string>(h, "dtype", path) != "f32")
    throw LoadError("cube '" + path + "': header field 'dtype' must be f32");
  if (detail::header_field<std::string>(h, "interleave", path) != "band-sequential")
    throw LoadError("cube '" + path + "': header field 'interleave' must be band-sequential");
  if (h.contains("byte_order") && h["byte_order"] != "little")
    throw LoadError("cube '" + path + "': header field 'byte_order' must be little");
  HsiCube cube;
  cube.bands = detail::header_field<std::size_t>(h, "bands", path);
  cube.height = detail::header_field<std::size_t>(h, "height", path);
  cube.width = detail::header_field<std::size_t>(h, "width", path);
  const auto range = detail::header_field<std::vector<float>>(h, "value_range", path);
  if (range.size() != 2 || !(range[1] > range[0]))
    throw LoadError("cube '" + path + "': header field 'value_range' must be [lo, hi] with hi > lo");
  cube.range_lo = range[0];
  cube.range_hi = range[1];
  if (h.contains("wavelengths_nm")) {
    cube.wavelengths_nm = detail::header_field<std::vector<double>>(h, "wavelengths_nm", path);
    if (cube.wavelengths_nm.size() != cube.bands)
      throw LoadError("cube '" + path + "': header field 'wavelengths_nm' has " +
                      std::to_string(cube.wavelengths_nm.size()) + " entries for " + std::to_string(cube.bands) + " bands");
  }
  const std::size_t expected = cube_payload_bytes(cube.bands, cube.height, cube.width);
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected)
    throw LoadError("cube '" + path + "': payload has " + std::to_string(bytes.size()) + " bytes, header implies " +
                    std::to_string(expected) + " bytes");
  cube.data.resize(cube.bands * cube.height * cube.width);
  detail::read_f32_le(bytes.data(), cube.data.data(), cube.data.size());
  for (std::size_t i = 0; i < cube.data.size(); ++i)
    if (!std::isfinite(cube.data[i]))
      throw LoadError("cube '" + path + "': non-finite value at element " + std::to_string(i));
  return cube;
}

}  // namespace ddpmfus
