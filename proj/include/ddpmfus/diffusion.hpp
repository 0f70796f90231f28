#pragma once

// Forward-process sampling, posterior means, the training objective and the
// per-step KL diagnostic.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ddpmfus/errors.hpp"
#include "ddpmfus/ops.hpp"
#include "ddpmfus/schedule.hpp"
#include "ddpmfus/tensor.hpp"

namespace ddpmfus {

namespace detail {

template <class T>
void require_pair(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
Tensor<T> affine2(const Tensor<T>& a, double ca, const Tensor<T>& b, double cb) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(ca * static_cast<double>(a[i]) + cb * static_cast<double>(b[i]));
  return Tensor<T>(a.shape(), std::move(out));
}

}  // namespace detail

/// Standard normal tensor drawn from rng.
template <class T, class Rng>
Tensor<T> gaussian_like(const Shape& shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(normal(rng));
  return Tensor<T>(shape, std::move(v));
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <class T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  detail::require_pair(x0, eps, "q_sample");
  const auto c = marginal_coeffs(sched, t);
  return detail::affine2(x0, c.signal, eps, c.noise);
}

/// One application of the stepwise kernel q(x_t | x_{t-1}).
template <class T>
Tensor<T> q_step(const Tensor<T>& x_prev, int t, const Tensor<T>& noise, const NoiseSchedule& sched) {
  detail::require_pair(x_prev, noise, "q_step");
  const double b = sched.beta(t);
  return detail::affine2(x_prev, std::sqrt(1.0 - b), noise, std::sqrt(b));
}

/// Mean of q(x_{t-1} | x_t, x0).
template <class T>
Tensor<T> posterior_mean(const Tensor<T>& xt, const Tensor<T>& x0, int t, const NoiseSchedule& sched) {
  detail::require_pair(xt, x0, "posterior_mean");
  const auto c = posterior_coeffs(sched, t);
  return detail::affine2(xt, c.coef_xt, x0, c.coef_x0);
}

/// The same posterior mean with x0 eliminated in favour of the noise.
template <class T>
Tensor<T> posterior_mean_from_eps(const Tensor<T>& xt, const Tensor<T>& eps, int t, const NoiseSchedule& sched) {
  detail::require_pair(xt, eps, "posterior_mean_from_eps");
  const double b = sched.beta(t);
  const double inv = 1.0 / std::sqrt(1.0 - b);
  return detail::affine2(xt, inv, eps, -inv * b / std::sqrt(1.0 - sched.alpha_bar(t)));
}

/// Mean over elements of |eps_true - eps_pred|^p, p in {1, 2}. Differentiable
/// in both arguments.
template <class T>
Tensor<T> simple_loss(const Tensor<T>& eps_true, const Tensor<T>& eps_pred, int p) {
  detail::require_pair(eps_true, eps_pred, "simple_loss");
  auto diff = sub(eps_pred, eps_true);
  if (p == 1) return mean(abs(diff));
  if (p == 2) return mean(mul(diff, diff));
  throw ParameterError("simple_loss: unsupported norm p = " + std::to_string(p) + " (expected 1 or 2)");
}

/// KL(q(x_{t-1}|x_t,x0) || N(mean_pred, beta_tilde_t I)) = ||mu_tilde - mean_pred||^2 / (2 beta_tilde_t).
template <class T>
double step_kl(const Tensor<T>& xt, const Tensor<T>& x0, const Tensor<T>& mean_pred, int t, const NoiseSchedule& sched) {
  detail::require_pair(xt, x0, "step_kl");
  detail::require_pair(xt, mean_pred, "step_kl");
  if (t == 1) throw ParameterError("step_kl: posterior variance vanishes at t = 1, KL scale undefined");
  const double var = sched.posterior_variance(t);
  const auto mu = posterior_mean(xt, x0, t, sched);
  double sq = 0.0;
  for (std::size_t i = 0; i < mu.numel(); ++i) {
    const double d = static_cast<double>(mu[i]) - static_cast<double>(mean_pred[i]);
    sq += d * d;
  }
  return sq / (2.0 * var);
}

/// The weight of ||eps - eps_hat||^2 that the per-step KL reduces to.
inline double eps_kl_weight(const NoiseSchedule& sched, int t) {
  const double b = sched.beta(t);
  return b * b / (2.0 * sched.posterior_variance(t) * (1.0 - b) * (1.0 - sched.alpha_bar(t)));
}

}  // namespace ddpmfus
