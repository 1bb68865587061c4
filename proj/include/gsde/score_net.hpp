#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "gsde/schedule.hpp"
#include "gsde/unet.hpp"

namespace gsde {

struct ScoreNetConfig {
  int image_size = 32;
  int in_channels = 2;  // 2 = noisy target + clean condition, 1 = unconditional
  int base_channels = 16;
  int depth = 2;
  int time_embed_dim = 32;

  UNetConfig unet() const {
    UNetConfig u;
    u.image_size = image_size;
    u.in_channels = in_channels;
    u.out_channels = 1;
    u.base_channels = base_channels;
    u.depth = depth;
    u.time_embed_dim = time_embed_dim;
    return u;
  }
  void validate() const {
    if (in_channels != 1 && in_channels != 2) throw ConfigError("network: in_channels must be 1 or 2");
    unet().validate();
  }
  bool conditional() const { return in_channels == 2; }
  bool operator==(const ScoreNetConfig&) const = default;
};

inline ScoreNetConfig score_config_from_unet(const UNetConfig& u) {
  return {u.image_size, u.in_channels, u.base_channels, u.depth, u.time_embed_dim};
}

// Conditional score model s([x_t, c], t). The U-Net output is divided by the
// perturbation-kernel std sqrt(1 - alpha_bar_t), so the network itself only
// has to produce O(1) values at every noise level.
template <typename S>
struct ScoreNet {
  ScoreNetConfig config;
  UNet<S> unet;

  ParamSet<S>& params() { return unet.params(); }
  const ParamSet<S>& params() const { return unet.params(); }

  template <typename T>
  ScoreNet<T> cast() const {
    return {config, unet.template cast<T>()};
  }
};

template <typename S = float>
ScoreNet<S> build_network(const ScoreNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return {cfg, UNet<S>(cfg.unet(), seed, /*zero_output=*/true)};
}

namespace detail {

template <typename S>
Tensor<S> score_input(const ScoreNet<S>& net, const Tensor<S>& x_t, const Tensor<S>* c) {
  require_single_channel(x_t, "score_forward x_t");
  if (net.config.conditional()) {
    if (!c || c->empty()) throw ShapeError("score_forward: conditional network requires a condition image");
    require_same_shape(x_t, *c, "score_forward condition");
    return concat_channels(x_t, *c);
  }
  if (c && !c->empty()) throw ShapeError("score_forward: unconditional network given a condition image");
  return x_t;
}

}  // namespace detail

// Score estimate with the shape of x_t. Pass an empty tensor as `c` for an
// unconditional network.
template <typename S>
Tensor<S> score_forward(const ScoreNet<S>& net, const Tensor<S>& x_t, const Tensor<S>& c, int t,
                        const NoiseSchedule& sched) {
  sched.require_step(t);
  Tensor<S> raw = net.unet.forward(detail::score_input(net, x_t, &c), t, sched.steps());
  raw *= static_cast<S>(1.0 / sched.noise_std(t));
  return raw;
}

// Per-step weight on the squared score error. kUniform is the plain objective
// |s - target|^2; kVariance multiplies it by 1 - alpha_bar_t, which turns it
// into the noise-prediction error |raw + eps|^2 and keeps the small-t terms
// from dominating the gradient.
enum class LossWeighting { kUniform, kVariance };

inline LossWeighting loss_weighting_from_string(const std::string& s) {
  if (s == "uniform") return LossWeighting::kUniform;
  if (s == "variance") return LossWeighting::kVariance;
  throw ConfigError("unknown loss weighting '" + s + "' (expected uniform or variance)");
}
inline std::string to_string(LossWeighting w) { return w == LossWeighting::kUniform ? "uniform" : "variance"; }

// Factor applied to |raw + eps|^2.
inline double loss_weight(LossWeighting w, int t, const NoiseSchedule& sched) {
  const double sd = sched.noise_std(t);
  return w == LossWeighting::kUniform ? 1.0 / (sd * sd) : 1.0;
}

template <typename S>
struct LossAndGrads {
  double loss = 0.0;
  ParamSet<S> grads;
};

// Squared L2 distance between s([x_t, x_V], t) and the perturbation-kernel
// score, with x_t = sqrt(ab) x_N + sqrt(1-ab) eps. The regression target is
// the kernel score -eps/sqrt(1-ab) (note the sign: grad log q(x_t | x_N)).
// Parameter gradients are added to `grads`.
template <typename S>
double loss_and_grads_into(const ScoreNet<S>& net, const Tensor<S>& x_V, const Tensor<S>& x_N, int t,
                           const Tensor<S>& eps, const NoiseSchedule& sched, ParamSet<S>& grads,
                           LossWeighting weighting = LossWeighting::kUniform) {
  require_same_shape(x_N, eps, "loss_and_grads eps");
  const Tensor<S> x_t = forward_perturb(x_N, t, eps, sched);
  UNetCache<S> cache;
  const Tensor<S> raw = net.unet.forward(detail::score_input(net, x_t, &x_V), t, sched.steps(), &cache);

  // s = raw / sd, target = -eps / sd  =>  |s - target|^2 = |raw + eps|^2 / sd^2
  const double w = loss_weight(weighting, t, sched);
  const S dscale = static_cast<S>(2.0 * w);
  Tensor<S> draw(raw.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const S r = raw[i] + eps[i];
    loss += static_cast<double>(r) * static_cast<double>(r);
    draw[i] = dscale * r;
  }
  loss *= w;
  if (!std::isfinite(loss)) throw NumericError("score loss is not finite at t=" + std::to_string(t));
  net.unet.backward(cache, draw, grads, false);
  return loss;
}

template <typename S>
LossAndGrads<S> loss_and_grads(const ScoreNet<S>& net, const Tensor<S>& x_V, const Tensor<S>& x_N, int t,
                               const Tensor<S>& eps, const NoiseSchedule& sched,
                               LossWeighting weighting = LossWeighting::kUniform) {
  LossAndGrads<S> out{0.0, net.params().zeros_like()};
  out.loss = loss_and_grads_into(net, x_V, x_N, t, eps, sched, out.grads, weighting);
  return out;
}

// Loss only, used by finite-difference checks and log recomputation.
template <typename S>
double score_loss(const ScoreNet<S>& net, const Tensor<S>& x_V, const Tensor<S>& x_N, int t, const Tensor<S>& eps,
                  const NoiseSchedule& sched, LossWeighting weighting = LossWeighting::kUniform) {
  const Tensor<S> x_t = forward_perturb(x_N, t, eps, sched);
  const Tensor<S> raw = net.unet.forward(detail::score_input(net, x_t, &x_V), t, sched.steps());
  double loss = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const S r = raw[i] + eps[i];
    loss += static_cast<double>(r) * static_cast<double>(r);
  }
  return loss * loss_weight(weighting, t, sched);
}

}  // namespace gsde
