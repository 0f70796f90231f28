#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ddpmfus/errors.hpp"

namespace ddpmfus {

/// Precomputed forward-process variances and reverse-posterior coefficients.
///
/// All arrays are indexed by the timestep t in [1, T]; alpha_bar also has
/// the entry t = 0, which is exactly 1, so the t = 1 posterior needs no
/// special case.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw ParameterError("noise schedule needs at least one step");
    for (std::size_t i = 0; i < betas_.size(); ++i) {
      if (!(betas_[i] > 0.0 && betas_[i] < 1.0))
        throw ParameterError("beta_" + std::to_string(i + 1) + " must lie in (0, 1)");
    }
    const std::size_t steps = betas_.size();
    alpha_bars_.resize(steps + 1);
    alpha_bars_[0] = 1.0;
    for (std::size_t t = 1; t <= steps; ++t) alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - betas_[t - 1]);
    posterior_var_.resize(steps);
    coef_xt_.resize(steps);
    coef_x0_.resize(steps);
    for (std::size_t t = 1; t <= steps; ++t) {
      const double b = betas_[t - 1], ab = alpha_bars_[t], ab_prev = alpha_bars_[t - 1];
      posterior_var_[t - 1] = (1.0 - ab_prev) / (1.0 - ab) * b;
      coef_xt_[t - 1] = std::sqrt(1.0 - b) * (1.0 - ab_prev) / (1.0 - ab);
      coef_x0_[t - 1] = std::sqrt(ab_prev) * b / (1.0 - ab);
    }
  }

  int steps() const { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_[index(t)]; }
  /// Valid for t in [0, T].
  double alpha_bar(int t) const {
    if (t < 0 || t > steps()) throw IndexError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
    return alpha_bars_[static_cast<std::size_t>(t)];
  }
  double posterior_variance(int t) const { return posterior_var_[index(t)]; }
  double posterior_coef_xt(int t) const { return coef_xt_[index(t)]; }
  double posterior_coef_x0(int t) const { return coef_x0_[index(t)]; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > steps()) throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<double> posterior_var_;
  std::vector<double> coef_xt_;
  std::vector<double> coef_x0_;
};

/// beta_t = beta_end * t / T, so the first step already carries noise.
inline NoiseSchedule linear_schedule(int steps, double beta_end) {
  if (steps < 1) throw ParameterError("schedule length T must be >= 1");
  if (!(beta_end > 0.0 && beta_end < 1.0)) throw ParameterError("beta_end must lie in (0, 1)");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) betas[static_cast<std::size_t>(t - 1)] = beta_end * t / steps;
  return NoiseSchedule(std::move(betas));
}

struct MarginalCoeffs {
  double signal;  // sqrt(alpha_bar_t)
  double noise;   // sqrt(1 - alpha_bar_t)
};

inline MarginalCoeffs marginal_coeffs(const NoiseSchedule& sched, int t) {
  if (t < 1 || t > sched.steps()) throw IndexError("timestep " + std::to_string(t) + " out of range");
  const double ab = sched.alpha_bar(t);
  return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

struct PosteriorCoeffs {
  double coef_xt;
  double coef_x0;
  double variance;
};

inline PosteriorCoeffs posterior_coeffs(const NoiseSchedule& sched, int t) {
  return {sched.posterior_coef_xt(t), sched.posterior_coef_x0(t), sched.posterior_variance(t)};
}

}  // namespace ddpmfus
