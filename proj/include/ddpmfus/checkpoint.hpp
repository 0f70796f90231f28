#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   magic    8 bytes  "DDPMFUS\x01"
//   version  u32
//   meta     u64 length + UTF-8 JSON {"denoiser": {...}, "train": {...}}
//   tensors  u32 count, then per tensor:
//            u32 name length, name, u32 rank, rank x u64 dims, f32 payload
//   optim    u8 present; if 1: u64 adam step, f64 beta1, beta2, eps, then for
//            each tensor (same order) f32 first moments, f32 second moments
//   step     u64 completed training steps

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddpmfus/config.hpp"
#include "ddpmfus/cube_io.hpp"
#include "ddpmfus/denoiser.hpp"
#include "ddpmfus/errors.hpp"
#include "ddpmfus/optim.hpp"

namespace ddpmfus {

inline constexpr char kCheckpointMagic[8] = {'D', 'D', 'P', 'M', 'F', 'U', 'S', '\x01'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserConfig config;
  std::optional<TrainConfig> train;
  DenoiserParams<float> params;
  std::optional<AdamState<float>> optimizer;
  std::uint64_t step = 0;
};

namespace detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& os) : os_(os) {}
  template <class U>
  void scalar(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    os_.write(reinterpret_cast<const char*>(b), sizeof(U));
  }
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void floats(std::span<const float> v) { write_f32_le(os_, v.data(), v.size()); }

 private:
  std::ostream& os_;
};

class LeReader {
 public:
  LeReader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  template <class U>
  U scalar(const char* what) {
    unsigned char b[sizeof(U)];
    need(b, sizeof(U), what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
  void need(void* p, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw LoadError("checkpoint '" + path_ + "' truncated while reading " + what);
  }
  std::vector<float> floats(std::size_t n, const char* what) {
    std::vector<char> raw(n * 4);
    need(raw.data(), raw.size(), what);
    std::vector<float> out(n);
    read_f32_le(raw.data(), out.data(), n);
    return out;
  }

 private:
  std::istream& is_;
  std::string path_;
};

}  // namespace detail

/// Writes atomically (temporary file, then rename).
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  check_params(ck.params, ck.config);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw LoadError("cannot open '" + tmp + "' for writing");
    detail::LeWriter w(os);
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.scalar<std::uint32_t>(kCheckpointVersion);
    nlohmann::json meta;
    meta["denoiser"] = ck.config;
    if (ck.train) meta["train"] = *ck.train;
    const std::string m = meta.dump();
    w.scalar<std::uint64_t>(m.size());
    w.bytes(m.data(), m.size());
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(ck.params.tensors.size()));
    for (const auto& [name, t] : ck.params.tensors) {
      w.scalar<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
      w.bytes(name.data(), name.size());
      w.scalar<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
      for (auto d : t.shape()) w.scalar<std::uint64_t>(d);
      w.floats(t.data());
    }
    w.scalar<std::uint8_t>(ck.optimizer ? 1 : 0);
    if (ck.optimizer) {
      const auto& o = *ck.optimizer;
      w.scalar<std::uint64_t>(o.step);
      w.scalar<double>(o.beta1);
      w.scalar<double>(o.beta2);
      w.scalar<double>(o.eps);
      for (const auto& [name, t] : ck.params.tensors) {
        auto mi = o.m.find(name);
        auto vi = o.v.find(name);
        if (mi == o.m.end() || vi == o.v.end() || mi->second.size() != t.numel() || vi->second.size() != t.numel())
          throw ContractError("optimizer moments missing or mis-sized for '" + name + "'");
        w.floats(mi->second);
        w.floats(vi->second);
      }
    }
    w.scalar<std::uint64_t>(ck.step);
    if (!os) throw LoadError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw LoadError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint '" + path + "'");
  detail::LeReader r(is, path);
  char magic[8];
  r.need(magic, sizeof magic, "magic bytes");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw FormatError("'" + path + "' is not a ddpmfus checkpoint (bad magic bytes)");
  const auto version = r.scalar<std::uint32_t>("format version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint '" + path + "' has format version " + std::to_string(version) +
                      ", this build reads version " + std::to_string(kCheckpointVersion));
  Checkpoint ck;
  const auto meta_len = r.scalar<std::uint64_t>("metadata length");
  if (meta_len > (1u << 24)) throw LoadError("checkpoint '" + path + "': implausible metadata length");
  std::string meta_text(meta_len, '\0');
  r.need(meta_text.data(), meta_len, "metadata");
  try {
    auto meta = nlohmann::json::parse(meta_text);
    ck.config = meta.at("denoiser").get<DenoiserConfig>();
    if (meta.contains("train")) ck.train = meta["train"].get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint '" + path + "': bad metadata (" + e.what() + ")");
  }
  const auto count = r.scalar<std::uint32_t>("tensor count");
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.scalar<std::uint32_t>("tensor name length");
    if (len > 4096) throw LoadError("checkpoint '" + path + "': implausible tensor name length");
    std::string name(len, '\0');
    r.need(name.data(), len, "tensor name");
    const auto rank = r.scalar<std::uint32_t>("tensor rank");
    if (rank > 8) throw LoadError("checkpoint '" + path + "': implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.scalar<std::uint64_t>("tensor dims"));
    Tensor<float> t(shape, r.floats(numel(shape), "tensor payload"));
    t.set_requires_grad(true);
    ck.params.tensors.emplace(name, std::move(t));
    order.push_back(name);
  }
  if (r.scalar<std::uint8_t>("optimizer flag")) {
    AdamState<float> o;
    o.step = r.scalar<std::uint64_t>("optimizer step");
    o.beta1 = r.scalar<double>("adam beta1");
    o.beta2 = r.scalar<double>("adam beta2");
    o.eps = r.scalar<double>("adam eps");
    for (const auto& name : order) {
      const std::size_t n = ck.params.tensors.at(name).numel();
      o.m[name] = r.floats(n, "first moments");
      o.v[name] = r.floats(n, "second moments");
    }
    ck.optimizer = std::move(o);
  }
  ck.step = r.scalar<std::uint64_t>("step counter");
  check_params(ck.params, ck.config);
  return ck;
}

}  // namespace ddpmfus
