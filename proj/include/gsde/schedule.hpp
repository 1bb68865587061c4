#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gsde/error.hpp"
#include "gsde/tensor.hpp"

namespace gsde {

// Discrete variance-preserving schedule, 1-based in t. Immutable once built.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

  double beta(int t) const { return beta_[checked(t)]; }
  double alpha_bar(int t) const { return alpha_bar_[checked(t)]; }
  // Standard deviation of the perturbation kernel, sqrt(1 - alpha_bar_t).
  double noise_std(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  void require_step(int t) const { (void)checked(t); }

  // First step whose alpha_bar is at or below `level` (T if none is).
  int step_for_alpha_bar(double level) const {
    for (int t = 1; t <= steps(); ++t)
      if (alpha_bar_[static_cast<std::size_t>(t - 1)] <= level) return t;
    return steps();
  }

  friend NoiseSchedule make_schedule(int T, double beta_min, double beta_max);

 private:
  std::size_t checked(int t) const {
    if (t < 1 || t > steps())
      throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    return static_cast<std::size_t>(t - 1);
  }

  double beta_min_ = 0.0;
  double beta_max_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

// Linear beta from beta_min (t=1) to beta_max (t=T).
inline NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
  if (T < 2) throw ConfigError("schedule: T must be >= 2, got " + std::to_string(T));
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
    throw ConfigError("schedule: require 0 < beta_min < beta_max < 1");
  NoiseSchedule s;
  s.beta_min_ = beta_min;
  s.beta_max_ = beta_max;
  s.beta_.resize(T);
  s.alpha_bar_.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    s.beta_[i] = beta_min + static_cast<double>(i) / static_cast<double>(T - 1) * (beta_max - beta_min);
    prod *= 1.0 - s.beta_[i];
    s.alpha_bar_[i] = prod;
  }
  return s;
}

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
template <typename S>
Tensor<S> forward_perturb(const Tensor<S>& x0, int t, const Tensor<S>& eps, const NoiseSchedule& sched) {
  require_same_shape(x0, eps, "forward_perturb");
  const double ab = sched.alpha_bar(t);
  const S signal = static_cast<S>(std::sqrt(ab));
  const S noise = static_cast<S>(std::sqrt(1.0 - ab));
  Tensor<S> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = signal * x0[i] + noise * eps[i];
  return out;
}

// f(x, t) = -beta_t x / 2
template <typename S>
Tensor<S> drift(const Tensor<S>& x, int t, const NoiseSchedule& sched) {
  const S k = static_cast<S>(-0.5 * sched.beta(t));
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * x[i];
  return out;
}

// sigma(t) = sqrt(beta_t)
inline double diffusion_coeff(int t, const NoiseSchedule& sched) { return std::sqrt(sched.beta(t)); }

}  // namespace gsde
