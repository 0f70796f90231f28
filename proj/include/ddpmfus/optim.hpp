#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "ddpmfus/denoiser.hpp"
#include "ddpmfus/errors.hpp"

namespace ddpmfus {

struct TrainConfig {
  long iterations = 250000;
  int batch_size = 8;
  int patch = 64;
  double lr_max = 1e-4;
  long cycle = 50000;
  int loss_p = 1;
  int timesteps = 2000;
  double beta_end = 0.01;
  std::uint64_t seed = 0;
  long checkpoint_every = 10000;
  double grad_clip = 0.0;  // global-norm clip, 0 disables

  void validate(const DenoiserConfig& net) const {
    if (iterations < 0) throw ParameterError("iterations must be >= 0");
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (patch < 1 || patch % net.scale)
      throw ParameterError("patch " + std::to_string(patch) + " must be a multiple of the scale " + std::to_string(net.scale));
    if (patch % net.spatial_multiple())
      throw ParameterError("patch " + std::to_string(patch) + " must be a multiple of " + std::to_string(net.spatial_multiple()));
    if (!(lr_max > 0)) throw ParameterError("lr_max must be positive");
    if (cycle < 1) throw ParameterError("cycle must be >= 1");
    if (loss_p != 1 && loss_p != 2) throw ParameterError("loss_p must be 1 or 2");
    if (timesteps != net.timesteps) throw ParameterError("train timesteps and denoiser timesteps differ");
    if (checkpoint_every < 0) throw ParameterError("checkpoint_every must be >= 0");
    if (grad_clip < 0) throw ParameterError("grad_clip must be >= 0");
  }

  bool operator==(const TrainConfig&) const = default;
};

/// Cosine annealing with hard restarts: lr_max -> 0 over each cycle.
inline double cosine_lr(long step, double lr_max, long cycle) {
  if (step < 0) throw ParameterError("cosine_lr: step must be >= 0");
  if (cycle < 1) throw ParameterError("cosine_lr: cycle must be >= 1");
  const double phase = static_cast<double>(step % cycle) / static_cast<double>(cycle);
  return lr_max * (1.0 + std::cos(std::numbers::pi * phase)) / 2.0;
}

/// Adam with bias correction.
template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;

  void init(const DenoiserParams<T>& params) {
    m.clear();
    v.clear();
    step = 0;
    for (const auto& [name, t] : params.tensors) {
      m[name].assign(t.numel(), T(0));
      v[name].assign(t.numel(), T(0));
    }
  }

  /// Applies one update from the accumulated gradients.
  void update(DenoiserParams<T>& params, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (auto& [name, t] : params.tensors) {
      auto mi = m.find(name);
      auto vi = v.find(name);
      if (mi == m.end() || vi == v.end() || mi->second.size() != t.numel())
        throw ContractError("optimizer state does not match parameter '" + name + "'");
      if (!t.has_grad()) continue;
      auto data = t.mutable_data();
      auto g = t.grad();
      auto& mm = mi->second;
      auto& vv = vi->second;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double gi = g[i];
        const double mn = beta1 * mm[i] + (1.0 - beta1) * gi;
        const double vn = beta2 * vv[i] + (1.0 - beta2) * gi * gi;
        mm[i] = static_cast<T>(mn);
        vv[i] = static_cast<T>(vn);
        const double mhat = static_cast<double>(mm[i]) / c1, vhat = static_cast<double>(vv[i]) / c2;
        data[i] = static_cast<T>(static_cast<double>(data[i]) - lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

/// Rescales all gradients so their global L2 norm is at most max_norm.
template <class T>
double clip_grad_norm(DenoiserParams<T>& params, double max_norm) {
  double sq = 0.0;
  for (auto& [_, t] : params.tensors)
    for (T g : t.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, t] : params.tensors)
      if (t.has_grad())
        for (auto& g : t.mutable_grad()) g = static_cast<T>(g * s);
  }
  return norm;
}

}  // namespace ddpmfus
