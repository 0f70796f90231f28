#pragma once

// Conditional noise-prediction U-net eps_theta(x_t, y, z, t).
//
// The network input is the channel stack [x_t, z, bicubic(y)]. The layer
// inventory is produced by describe_params(); initialisation and the forward
// pass both walk that inventory, and every forward pass checks that each
// parameter was read exactly once.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ddpmfus/cube.hpp"
#include "ddpmfus/errors.hpp"
#include "ddpmfus/ops.hpp"
#include "ddpmfus/tensor.hpp"

namespace ddpmfus {

struct DenoiserConfig {
  int bands = 31;      // L, hyperspectral bands
  int msi_bands = 3;   // l, multispectral bands
  int scale = 32;      // S, spatial ratio between z and y
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 4};
  std::vector<int> attention_levels{2};
  bool mid_attention = true;
  int res_blocks = 1;  // residual blocks per level on the way down
  int time_embed_dim = 128;
  int groups = 8;
  int timesteps = 2000;  // T the network is conditioned on

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  int input_channels() const { return 2 * bands + msi_bands; }
  int level_channels(int level) const { return base_channels * channel_multipliers.at(static_cast<std::size_t>(level)); }
  bool attention_at(int level) const {
    for (int a : attention_levels)
      if (a == level) return true;
    return false;
  }
  /// Spatial size of any input must be a multiple of this.
  int spatial_multiple() const { return 1 << (levels() - 1); }

  void validate() const {
    if (bands < 1 || msi_bands < 1) throw ConfigError("denoiser: band counts must be positive");
    if (scale < 1) throw ConfigError("denoiser: scale must be >= 1");
    if (levels() < 1) throw ConfigError("denoiser: at least one resolution level is required");
    if (time_embed_dim < 2 || time_embed_dim % 2) throw ConfigError("denoiser: time_embed_dim must be even");
    if (res_blocks < 1) throw ConfigError("denoiser: res_blocks must be >= 1");
    if (timesteps < 1) throw ConfigError("denoiser: timesteps must be >= 1");
    if (groups < 1) throw ConfigError("denoiser: groups must be >= 1");
    for (int m : channel_multipliers)
      if (m < 1) throw ConfigError("denoiser: channel multipliers must be positive");
    for (int l = 0; l < levels(); ++l)
      if (level_channels(l) % groups)
        throw ConfigError("denoiser: level " + std::to_string(l) + " width " + std::to_string(level_channels(l)) +
                          " not divisible by " + std::to_string(groups) + " groups");
    for (int a : attention_levels)
      if (a < 0 || a >= levels()) throw ConfigError("denoiser: attention level " + std::to_string(a) + " out of range");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

/// Small configuration used for tests and desk-scale experiments.
inline DenoiserConfig tiny_config(int bands, int msi_bands, int scale) {
  DenoiserConfig cfg;
  cfg.bands = bands;
  cfg.msi_bands = msi_bands;
  cfg.scale = scale;
  cfg.base_channels = 16;
  cfg.channel_multipliers = {1, 2};
  cfg.attention_levels = {1};
  cfg.mid_attention = true;
  cfg.res_blocks = 1;
  cfg.time_embed_dim = 32;
  cfg.groups = 4;
  cfg.timesteps = 200;
  return cfg;
}

/// Configuration for 31-band / 3-band CAVE-like data at ratio 32, sized to
/// about 1.7M parameters.
inline DenoiserConfig cave_config() {
  DenoiserConfig cfg;
  cfg.bands = 31;
  cfg.msi_bands = 3;
  cfg.scale = 32;
  cfg.base_channels = 24;
  cfg.channel_multipliers = {1, 2, 4};
  cfg.attention_levels = {2};
  cfg.mid_attention = true;
  cfg.res_blocks = 1;
  cfg.time_embed_dim = 128;
  cfg.groups = 8;
  cfg.timesteps = 2000;
  return cfg;
}

enum class InitKind { kKaimingUniform, kZero, kOne };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init;
  std::size_t fan_in = 0;
};

namespace detail {

struct SpecBuilder {
  std::vector<ParamSpec> specs;

  void weight(const std::string& name, Shape shape, std::size_t fan_in, bool zero = false) {
    specs.push_back({name, std::move(shape), zero ? InitKind::kZero : InitKind::kKaimingUniform, fan_in});
  }
  void zeros(const std::string& name, std::size_t n) { specs.push_back({name, Shape{n}, InitKind::kZero, 0}); }
  void ones(const std::string& name, std::size_t n) { specs.push_back({name, Shape{n}, InitKind::kOne, 0}); }

  void conv(const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, bool zero = false) {
    weight(name + ".weight", Shape{cout, cin, k, k}, cin * k * k, zero);
    zeros(name + ".bias", cout);
  }
  void dense(const std::string& name, std::size_t out, std::size_t in) {
    weight(name + ".weight", Shape{out, in}, in);
    zeros(name + ".bias", out);
  }
  void norm(const std::string& name, std::size_t c) {
    ones(name + ".gamma", c);
    zeros(name + ".beta", c);
  }
  void res_block(const std::string& name, std::size_t cin, std::size_t cout, std::size_t temb) {
    norm(name + ".norm1", cin);
    conv(name + ".conv1", cout, cin, 3);
    dense(name + ".temb", cout, temb);
    norm(name + ".norm2", cout);
    conv(name + ".conv2", cout, cout, 3);
    if (cin != cout) conv(name + ".skip", cout, cin, 1);
  }
  void attention(const std::string& name, std::size_t c) {
    norm(name + ".norm", c);
    for (const char* p : {"q", "k", "v", "o"}) dense(name + "." + p, c, c);
  }
};

// Walks the U-net topology once; Visitor receives structural events in
// forward order. Shared by describe_params() and the forward pass so the two
// can never disagree.
template <class Visitor>
void walk_unet(const DenoiserConfig& cfg, Visitor& v) {
  const int levels = cfg.levels();
  std::vector<std::size_t> skips;
  std::size_t cur = static_cast<std::size_t>(cfg.base_channels);
  v.conv_in(cur);
  skips.push_back(cur);
  for (int l = 0; l < levels; ++l) {
    const std::size_t ch = static_cast<std::size_t>(cfg.level_channels(l));
    for (int r = 0; r < cfg.res_blocks; ++r) {
      const std::string name = "down." + std::to_string(l) + ".res." + std::to_string(r);
      v.res_block(name, cur, ch);
      cur = ch;
      if (cfg.attention_at(l)) v.attention("down." + std::to_string(l) + ".attn." + std::to_string(r), cur);
      v.push_skip();
      skips.push_back(cur);
    }
    if (l + 1 < levels) {
      v.downsample("down." + std::to_string(l) + ".downsample", cur);
      v.push_skip();
      skips.push_back(cur);
    }
  }
  v.res_block("mid.res0", cur, cur);
  if (cfg.mid_attention) v.attention("mid.attn", cur);
  v.res_block("mid.res1", cur, cur);
  for (int l = levels - 1; l >= 0; --l) {
    const std::size_t ch = static_cast<std::size_t>(cfg.level_channels(l));
    for (int r = 0; r <= cfg.res_blocks; ++r) {
      const std::size_t skip = skips.back();
      skips.pop_back();
      v.pop_skip_concat(skip);
      v.res_block("up." + std::to_string(l) + ".res." + std::to_string(r), cur + skip, ch);
      cur = ch;
      if (cfg.attention_at(l)) v.attention("up." + std::to_string(l) + ".attn." + std::to_string(r), cur);
    }
    if (l > 0) v.upsample("up." + std::to_string(l) + ".upsample", cur);
  }
  v.output(cur);
}

struct DescribeVisitor {
  const DenoiserConfig& cfg;
  SpecBuilder b;
  std::size_t temb() const { return static_cast<std::size_t>(cfg.time_embed_dim); }

  void conv_in(std::size_t c) {
    const std::size_t d = temb();
    b.dense("time.dense0", d, d);
    b.dense("time.dense1", d, d);
    b.conv("conv_in", c, static_cast<std::size_t>(cfg.input_channels()), 3);
  }
  void res_block(const std::string& n, std::size_t cin, std::size_t cout) { b.res_block(n, cin, cout, temb()); }
  void attention(const std::string& n, std::size_t c) { b.attention(n, c); }
  void downsample(const std::string& n, std::size_t c) { b.conv(n, c, c, 3); }
  void upsample(const std::string& n, std::size_t c) { b.conv(n, c, c, 3); }
  void push_skip() {}
  void pop_skip_concat(std::size_t) {}
  void output(std::size_t c) {
    b.norm("out.norm", c);
    b.conv("out.conv", static_cast<std::size_t>(cfg.bands), c, 3, /*zero=*/true);
  }
};

}  // namespace detail

/// Ordered inventory of every learnable tensor of the network.
inline std::vector<ParamSpec> describe_params(const DenoiserConfig& cfg) {
  cfg.validate();
  detail::DescribeVisitor v{cfg, {}};
  detail::walk_unet(cfg, v);
  return std::move(v.b.specs);
}

inline std::size_t parameter_count(const DenoiserConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : describe_params(cfg)) n += numel(s.shape);
  return n;
}

/// Named learnable tensors of the denoiser.
template <class T>
struct DenoiserParams {
  std::map<std::string, Tensor<T>> tensors;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.numel();
    return n;
  }
  void zero_grad() {
    for (auto& [_, t] : tensors) t.zero_grad();
  }
  Tensor<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
  }
};

/// Kaiming-uniform (bound 1/sqrt(fan_in)) weights, zero biases, unit norm
/// gains and a zero output convolution.
template <class T>
DenoiserParams<T> init_params(const DenoiserConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DenoiserParams<T> params;
  for (const auto& spec : describe_params(cfg)) {
    Tensor<T> t(spec.shape);
    auto d = t.mutable_data();
    switch (spec.init) {
      case InitKind::kZero:
        break;
      case InitKind::kOne:
        std::fill(d.begin(), d.end(), T(1));
        break;
      case InitKind::kKaimingUniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& x : d) x = static_cast<T>(u(rng));
        break;
      }
    }
    t.set_requires_grad(true);
    params.tensors.emplace(spec.name, std::move(t));
  }
  return params;
}

/// Converts parameters between scalar types; the result tracks gradients.
template <class To, class From>
DenoiserParams<To> cast_params(const DenoiserParams<From>& in) {
  DenoiserParams<To> out;
  for (const auto& [name, t] : in.tensors) {
    Tensor<To> c(t.shape(), std::vector<To>(t.data().begin(), t.data().end()));
    c.set_requires_grad(true);
    out.tensors.emplace(name, std::move(c));
  }
  return out;
}

/// Checks that the parameter map matches the configured architecture.
template <class T>
void check_params(const DenoiserParams<T>& params, const DenoiserConfig& cfg) {
  const auto specs = describe_params(cfg);
  if (specs.size() != params.tensors.size())
    throw ConfigError("parameter map has " + std::to_string(params.tensors.size()) + " tensors, architecture needs " +
                      std::to_string(specs.size()));
  for (const auto& s : specs) {
    auto it = params.tensors.find(s.name);
    if (it == params.tensors.end()) throw ConfigError("missing parameter '" + s.name + "'");
    if (it->second.shape() != s.shape)
      throw ConfigError("parameter '" + s.name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(s.shape));
  }
}

/// Sinusoidal embedding: e[2i] = sin(t / 10000^(2i/dim)), e[2i+1] = cos(...).
template <class T = double>
std::vector<T> time_embedding(int t, int dim, int steps) {
  if (dim < 2 || dim % 2) throw ParameterError("time embedding dimension must be even, got " + std::to_string(dim));
  if (t < 0 || t > steps) throw IndexError("time embedding: t = " + std::to_string(t) + " outside [0, " + std::to_string(steps) + "]");
  std::vector<T> e(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    e[static_cast<std::size_t>(2 * i)] = static_cast<T>(std::sin(t * freq));
    e[static_cast<std::size_t>(2 * i + 1)] = static_cast<T>(std::cos(t * freq));
  }
  return e;
}

/// Channel stack [x_t, z, bicubic(y)] at the resolution of z.
template <class T>
Tensor<T> assemble_condition(const Tensor<T>& xt, const Tensor<T>& y, const Tensor<T>& z) {
  if (xt.rank() != 3 || y.rank() != 3 || z.rank() != 3)
    throw DimensionError("assemble_condition expects [C,H,W] tensors");
  const std::size_t h = z.dim(1), w = z.dim(2);
  if (xt.dim(1) != h || xt.dim(2) != w)
    throw DimensionError("assemble_condition: x_t " + shape_str(xt.shape()) + " vs z " + shape_str(z.shape()));
  if (xt.dim(0) != y.dim(0))
    throw DimensionError("assemble_condition: x_t and y band counts differ");
  if (y.dim(1) == 0 || y.dim(2) == 0 || h % y.dim(1) || w % y.dim(2) || h / y.dim(1) != w / y.dim(2))
    throw DimensionError("assemble_condition: z " + shape_str(z.shape()) + " is not an integer multiple of y " +
                         shape_str(y.shape()));
  auto y_up = bicubic_upsample(y, h / y.dim(1));
  return concat_channels<T>({xt, z, y_up});
}

namespace detail {

template <class T>
class ParamReader {
 public:
  explicit ParamReader(const DenoiserParams<T>& p) : params_(p) {}

  const Tensor<T>& operator()(const std::string& name) {
    auto it = params_.tensors.find(name);
    if (it == params_.tensors.end()) throw ConfigError("missing parameter '" + name + "'");
    ++uses_[name];
    return it->second;
  }

  void verify() const {
    for (const auto& [name, _] : params_.tensors) {
      auto it = uses_.find(name);
      const int n = it == uses_.end() ? 0 : it->second;
      if (n != 1)
        throw ConfigError("parameter '" + name + "' consumed " + std::to_string(n) + " times in one forward pass");
    }
  }

 private:
  const DenoiserParams<T>& params_;
  std::map<std::string, int> uses_;
};

template <class T>
struct ForwardVisitor {
  const DenoiserConfig& cfg;
  ParamReader<T>& p;
  Tensor<T> h;
  Tensor<T> temb;  // activated shared time embedding
  std::vector<Tensor<T>> skips;

  Tensor<T> norm(const std::string& n, const Tensor<T>& x) {
    const auto& g = p(n + ".gamma");
    const auto& b = p(n + ".beta");
    return group_norm(x, static_cast<std::size_t>(cfg.groups), g, b);
  }
  Tensor<T> conv(const std::string& n, const Tensor<T>& x, std::size_t stride, std::size_t pad) {
    const auto& w = p(n + ".weight");
    const auto& b = p(n + ".bias");
    return conv2d(x, w, b, stride, pad);
  }
  Tensor<T> lin(const std::string& n, const Tensor<T>& x) {
    const auto& w = p(n + ".weight");
    const auto& b = p(n + ".bias");
    return dense(x, w, b);
  }

  void conv_in(std::size_t) {
    h = conv("conv_in", h, 1, 1);
    skips.push_back(h);
  }
  void res_block(const std::string& n, std::size_t cin, std::size_t cout) {
    auto a = conv(n + ".conv1", silu(norm(n + ".norm1", h)), 1, 1);
    a = add_channel_bias(a, lin(n + ".temb", temb));
    a = conv(n + ".conv2", silu(norm(n + ".norm2", a)), 1, 1);
    auto shortcut = cin != cout ? conv(n + ".skip", h, 1, 0) : h;
    h = add(shortcut, a);
  }
  void attention(const std::string& n, std::size_t) {
    auto normed = norm(n + ".norm", h);
    AttentionWeights<T> w;
    w.wq = p(n + ".q.weight");
    w.bq = p(n + ".q.bias");
    w.wk = p(n + ".k.weight");
    w.bk = p(n + ".k.bias");
    w.wv = p(n + ".v.weight");
    w.bv = p(n + ".v.bias");
    w.wo = p(n + ".o.weight");
    w.bo = p(n + ".o.bias");
    h = add(h, attention_branch(normed, w));
  }
  void downsample(const std::string& n, std::size_t) { h = conv(n, h, 2, 1); }
  void upsample(const std::string& n, std::size_t) { h = conv(n, upsample_nearest(h, 2), 1, 1); }
  void push_skip() { skips.push_back(h); }
  void pop_skip_concat(std::size_t) {
    Tensor<T> s = skips.back();
    skips.pop_back();
    if (s.dim(1) != h.dim(1) || s.dim(2) != h.dim(2))
      throw ConfigError("skip connection joins " + shape_str(s.shape()) + " with " + shape_str(h.shape()));
    h = concat_channels<T>({h, s});
  }
  void output(std::size_t) { h = conv("out.conv", silu(norm("out.norm", h)), 1, 1); }
};

}  // namespace detail

/// eps_theta(IN, t): IN is the assembled [2L+l, H, W] condition stack.
template <class T>
Tensor<T> predict_noise(const DenoiserParams<T>& params, const DenoiserConfig& cfg, const Tensor<T>& in, int t) {
  cfg.validate();
  if (in.rank() != 3 || in.dim(0) != static_cast<std::size_t>(cfg.input_channels()))
    throw DimensionError("predict_noise: input " + shape_str(in.shape()) + " but config expects " +
                         std::to_string(cfg.input_channels()) + " channels");
  const std::size_t mult = static_cast<std::size_t>(cfg.spatial_multiple());
  if (in.dim(1) % mult || in.dim(2) % mult)
    throw DimensionError("predict_noise: spatial size " + shape_str(in.shape()) + " not divisible by " +
                         std::to_string(mult));
  if (t < 1 || t > cfg.timesteps)
    throw IndexError("predict_noise: t = " + std::to_string(t) + " outside [1, " + std::to_string(cfg.timesteps) + "]");
  check_params(params, cfg);

  detail::ParamReader<T> reader(params);
  detail::ForwardVisitor<T> v{cfg, reader, in, {}, {}};
  const auto e = time_embedding<T>(t, cfg.time_embed_dim, cfg.timesteps);
  Tensor<T> emb(Shape{e.size()}, e);
  emb = v.lin("time.dense1", silu(v.lin("time.dense0", emb)));
  v.temb = silu(emb);
  detail::walk_unet(cfg, v);
  reader.verify();
  return v.h;
}

/// Maps [lo, hi] data to the [-1, 1] range the network diffuses in.
template <class T>
Tensor<T> to_model_range(const HsiCube& cube) {
  const double lo = cube.range_lo, span = static_cast<double>(cube.range_hi) - cube.range_lo;
  if (!(span > 0)) throw ParameterError("cube value range must have hi > lo");
  std::vector<T> v(cube.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(2.0 * (cube.data[i] - lo) / span - 1.0);
  return Tensor<T>(Shape{cube.bands, cube.height, cube.width}, std::move(v));
}

/// Inverse of to_model_range, clamped to [lo, hi].
template <class T>
HsiCube from_model_range(const Tensor<T>& t, float lo = 0.0f, float hi = 1.0f) {
  HsiCube out = to_cube(t);
  for (auto& v : out.data) {
    const double unit = std::clamp((static_cast<double>(v) + 1.0) / 2.0, 0.0, 1.0);
    v = static_cast<float>(lo + unit * (static_cast<double>(hi) - lo));
  }
  out.range_lo = lo;
  out.range_hi = hi;
  return out;
}

}  // namespace ddpmfus
