#pragma once

// Reverse-process inference: ancestral DDPM steps and DDIM skip-step fusion.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ddpmfus/cube.hpp"
#include "ddpmfus/denoiser.hpp"
#include "ddpmfus/diffusion.hpp"
#include "ddpmfus/errors.hpp"
#include "ddpmfus/schedule.hpp"

namespace ddpmfus {

/// Strictly increasing timesteps tau_1 < ... < tau_d = T.
class TauSchedule {
 public:
  TauSchedule(std::vector<int> steps, int total) : steps_(std::move(steps)) {
    if (steps_.empty()) throw ParameterError("tau schedule must not be empty");
    if (steps_.back() != total) throw ParameterError("tau schedule must end at T = " + std::to_string(total));
    if (steps_.front() < 1) throw ParameterError("tau schedule entries must be >= 1");
    for (std::size_t i = 1; i < steps_.size(); ++i)
      if (steps_[i] <= steps_[i - 1]) throw ParameterError("tau schedule must be strictly increasing");
  }
  const std::vector<int>& steps() const { return steps_; }
  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<int> steps_;
};

/// Evenly spaced sub-sequence: tau_i = round(i T / d), de-duplicated.
inline TauSchedule select_tau(int total, int d) {
  if (total < 1 || d < 1 || d > total)
    throw ParameterError("select_tau: need 1 <= d <= T, got d = " + std::to_string(d) + ", T = " + std::to_string(total));
  std::vector<int> steps;
  for (long i = 1; i <= d; ++i) {
    const int v = static_cast<int>((2 * i * total + d) / (2L * d));
    if (v >= 1 && (steps.empty() || v > steps.back())) steps.push_back(v);
  }
  if (steps.back() != total) steps.push_back(total);
  return TauSchedule(std::move(steps), total);
}

enum class SigmaMode { kZero, kPosterior };

inline SigmaMode parse_sigma_mode(const std::string& s) {
  if (s == "zero") return SigmaMode::kZero;
  if (s == "posterior") return SigmaMode::kPosterior;
  throw ParameterError("unknown sigma mode '" + s + "' (expected zero or posterior)");
}

/// Per-transition noise level. The posterior mode reduces to sqrt(beta_tilde_t)
/// when t_prev = t - 1 and to 0 at t_prev = 0.
inline double ddim_sigma(const NoiseSchedule& sched, int t, int t_prev, SigmaMode mode) {
  if (mode == SigmaMode::kZero) return 0.0;
  const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
  const double var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
  return std::sqrt(std::max(0.0, var));
}

/// One DDIM transition x_t -> x_{t_prev}. zeta is the fresh Gaussian draw; it
/// is ignored when sigma is zero and may then be an empty tensor.
template <class T>
Tensor<T> ddim_step(const Tensor<T>& xt, const Tensor<T>& eps_hat, int t, int t_prev, double sigma,
                    const NoiseSchedule& sched, const Tensor<T>& zeta) {
  if (xt.shape() != eps_hat.shape()) throw DimensionError("ddim_step: x_t and eps_hat shapes differ");
  if (!(t_prev >= 0 && t_prev < t && t <= sched.steps()))
    throw IndexError("ddim_step: need 0 <= t_prev < t <= T, got t = " + std::to_string(t) + ", t_prev = " +
                     std::to_string(t_prev));
  const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
  const double dir_var = 1.0 - ab_prev - sigma * sigma;
  if (sigma < 0.0 || dir_var < -1e-12)
    throw ParameterError("ddim_step: sigma^2 = " + std::to_string(sigma * sigma) + " exceeds 1 - alpha_bar_prev = " +
                         std::to_string(1.0 - ab_prev));
  const bool noisy = sigma > 0.0;
  if (noisy && zeta.shape() != xt.shape()) throw DimensionError("ddim_step: zeta shape differs from x_t");
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  const double sa_prev = std::sqrt(ab_prev), dir = std::sqrt(std::max(0.0, dir_var));
  std::vector<T> out(xt.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = eps_hat[i];
    const double x0 = (static_cast<double>(xt[i]) - sn * e) / sa;
    double v = sa_prev * x0 + dir * e;
    if (noisy) v += sigma * static_cast<double>(zeta[i]);
    out[i] = static_cast<T>(v);
  }
  return Tensor<T>(xt.shape(), std::move(out));
}

/// Ancestral DDPM transition x_t -> x_{t-1}: posterior mean from eps_hat plus
/// sqrt(beta_tilde_t) zeta (no noise at t = 1).
template <class T>
Tensor<T> ancestral_step(const Tensor<T>& xt, const Tensor<T>& eps_hat, int t, const NoiseSchedule& sched,
                         const Tensor<T>& zeta) {
  auto mu = posterior_mean_from_eps(xt, eps_hat, t, sched);
  if (t == 1) return mu;
  if (zeta.shape() != xt.shape()) throw DimensionError("ancestral_step: zeta shape differs from x_t");
  const double s = std::sqrt(sched.posterior_variance(t));
  std::vector<T> out(mu.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(static_cast<double>(mu[i]) + s * static_cast<double>(zeta[i]));
  return Tensor<T>(xt.shape(), std::move(out));
}

enum class TileMode { kAuto, kAlways, kNever };

struct FuseOptions {
  TileMode tiling = TileMode::kAuto;
  std::size_t tile = 64;
  std::size_t stride = 48;
  std::size_t max_full_pixels = 256 * 256;  // auto mode tiles above this
};

namespace detail {

inline std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile, std::size_t stride) {
  if (extent <= tile) return {0};
  std::vector<std::size_t> o;
  for (std::size_t p = 0; p + tile < extent; p += stride) o.push_back(p);
  o.push_back(extent - tile);
  return o;
}

template <class T>
Tensor<T> crop_tensor(const Tensor<T>& a, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  const std::size_t c = a.dim(0), H = a.dim(1), W = a.dim(2);
  std::vector<T> out(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t k = 0; k < w; ++k) out[(ch * h + r) * w + k] = a[(ch * H + y + r) * W + x + k];
  (void)H;
  return Tensor<T>(Shape{c, h, w}, std::move(out));
}

}  // namespace detail

/// Noise prediction on a whole scene, optionally as feather-blended tiles.
template <class T>
Tensor<T> predict_noise_scene(const DenoiserParams<T>& params, const DenoiserConfig& cfg, const Tensor<T>& in, int t,
                              const FuseOptions& opt) {
  NoGradGuard no_grad;
  const std::size_t h = in.dim(1), w = in.dim(2);
  const std::size_t mult = static_cast<std::size_t>(cfg.spatial_multiple());
  bool tiled = opt.tiling == TileMode::kAlways ||
               (opt.tiling == TileMode::kAuto && (h * w > opt.max_full_pixels || h % mult || w % mult));
  if (tiled && (opt.tile % mult || opt.stride == 0 || opt.stride > opt.tile))
    throw ParameterError("tiling: tile must be a multiple of " + std::to_string(mult) + " and 0 < stride <= tile");
  if (!tiled || (h <= opt.tile && w <= opt.tile)) return predict_noise(params, cfg, in, t);

  const std::size_t th = std::min(opt.tile, h), tw = std::min(opt.tile, w);
  if (th % mult || tw % mult) throw DimensionError("tiling: scene smaller than one tile must still be a multiple of " + std::to_string(mult));
  const std::size_t bands = static_cast<std::size_t>(cfg.bands);
  std::vector<double> acc(bands * h * w, 0.0), wsum(h * w, 0.0);
  auto ramp = [](std::size_t i, std::size_t n) { return static_cast<double>(std::min(i + 1, n - i)); };
  for (std::size_t oy : detail::tile_origins(h, th, opt.stride))
    for (std::size_t ox : detail::tile_origins(w, tw, opt.stride)) {
      auto pred = predict_noise(params, cfg, detail::crop_tensor(in, oy, ox, th, tw), t);
      for (std::size_t r = 0; r < th; ++r)
        for (std::size_t c = 0; c < tw; ++c) {
          const double wt = ramp(r, th) * ramp(c, tw);
          wsum[(oy + r) * w + ox + c] += wt;
          for (std::size_t b = 0; b < bands; ++b)
            acc[(b * h + oy + r) * w + ox + c] += wt * static_cast<double>(pred[(b * th + r) * tw + c]);
        }
    }
  std::vector<T> out(acc.size());
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t p = 0; p < h * w; ++p) out[b * h * w + p] = static_cast<T>(acc[b * h * w + p] / wsum[p]);
  return Tensor<T>(Shape{bands, h, w}, std::move(out));
}

/// Fuses an LrHSI y and HrMSI z into an HrHSI estimate by running the DDIM
/// sampler over tau from pure noise. Output is clamped to y's value range.
template <class T>
HsiCube fuse(const DenoiserParams<T>& params, const DenoiserConfig& cfg, const NoiseSchedule& sched, const HsiCube& y,
             const HsiCube& z, const TauSchedule& tau, SigmaMode sigma_mode, std::uint64_t seed,
             const FuseOptions& opt = {}) {
  if (y.bands != static_cast<std::size_t>(cfg.bands))
    throw DimensionError("fuse: LrHSI has " + std::to_string(y.bands) + " bands, model expects " + std::to_string(cfg.bands));
  if (z.bands != static_cast<std::size_t>(cfg.msi_bands))
    throw DimensionError("fuse: HrMSI has " + std::to_string(z.bands) + " bands, model expects " +
                         std::to_string(cfg.msi_bands));
  const std::size_t s = static_cast<std::size_t>(cfg.scale);
  if (z.height != y.height * s || z.width != y.width * s)
    throw DimensionError("fuse: HrMSI " + z.shape_string() + " is not " + std::to_string(s) + "x LrHSI " + y.shape_string());
  if (tau.steps().back() != sched.steps() || sched.steps() != cfg.timesteps)
    throw ParameterError("fuse: schedule length, tau and model timesteps disagree");

  NoGradGuard no_grad;
  const auto ym = to_model_range<T>(y);
  const auto zm = to_model_range<T>(z);
  const auto y_up = bicubic_upsample(ym, s);
  const Shape shape{y.bands, z.height, z.width};
  std::mt19937_64 rng(seed);
  Tensor<T> x = gaussian_like<T>(shape, rng);
  const auto& steps = tau.steps();
  for (std::size_t i = steps.size(); i-- > 0;) {
    const int t = steps[i];
    const int t_prev = i > 0 ? steps[i - 1] : 0;
    const auto in = concat_channels<T>({x, zm, y_up});
    const auto eps_hat = predict_noise_scene(params, cfg, in, t, opt);
    const double sigma = ddim_sigma(sched, t, t_prev, sigma_mode);
    Tensor<T> zeta = sigma > 0.0 ? gaussian_like<T>(shape, rng) : Tensor<T>(Shape{0});
    x = ddim_step(x, eps_hat, t, t_prev, sigma, sched, zeta);
  }
  return from_model_range(x, y.range_lo, y.range_hi);
}

}  // namespace ddpmfus
