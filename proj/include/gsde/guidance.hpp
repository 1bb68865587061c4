#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gsde/filters.hpp"
#include "gsde/schedule.hpp"
#include "gsde/unet.hpp"

namespace gsde {

// ---------------------------------------------------------------------------
// High-pass filter

enum class FilterKind { kLaplacian3x3, kIdentityMinusGaussian };

inline FilterKind filter_kind_from_string(const std::string& s) {
  if (s == "laplacian3x3") return FilterKind::kLaplacian3x3;
  if (s == "identity_minus_gaussian") return FilterKind::kIdentityMinusGaussian;
  throw ConfigError("unknown filter '" + s + "' (expected laplacian3x3 or identity_minus_gaussian)");
}
inline std::string to_string(FilterKind k) {
  return k == FilterKind::kLaplacian3x3 ? "laplacian3x3" : "identity_minus_gaussian";
}

struct HighPassFilter {
  FilterKind kind = FilterKind::kLaplacian3x3;
  double blur_sigma = 2.0;  // pixels at 32x32; scaled with image size

  Kernel2D kernel(int image_size) const {
    if (kind == FilterKind::kLaplacian3x3) return laplacian3x3();
    if (!(blur_sigma > 0.0)) throw ConfigError("filter: blur_sigma must be positive");
    Kernel2D k = gaussian_kernel(blur_sigma * image_size / 32.0);
    for (double& v : k.taps) v = -v;
    k.at(0, 0) += 1.0;
    return k;
  }
};

template <typename S>
Tensor<S> highpass(const HighPassFilter& f, const Tensor<S>& x) {
  require_single_channel(x, "highpass");
  return correlate_reflect(x, f.kernel(x.height()));
}

// ||phi(x_t) - phi(c_t)||^2
template <typename S>
double energy_f(const HighPassFilter& f, const Tensor<S>& x_t, const Tensor<S>& c_t) {
  require_same_shape(x_t, c_t, "energy_f");
  return squared_distance(highpass(f, x_t), highpass(f, c_t));
}

// 2 phi^T (phi x_t - phi c_t)
template <typename S>
Tensor<S> grad_energy_f(const HighPassFilter& f, const Tensor<S>& x_t, const Tensor<S>& c_t) {
  require_same_shape(x_t, c_t, "grad_energy_f");
  require_single_channel(x_t, "grad_energy_f");
  const Kernel2D k = f.kernel(x_t.height());
  Tensor<S> g = correlate_reflect_adjoint(correlate_reflect(x_t, k) - correlate_reflect(c_t, k), k);
  g *= S(2);
  return g;
}

// ---------------------------------------------------------------------------
// Heatmap extractor

enum class HeatmapKind { kLinearBank, kTrainedNet };

inline HeatmapKind heatmap_kind_from_string(const std::string& s) {
  if (s == "linear_bank") return HeatmapKind::kLinearBank;
  if (s == "trained_net") return HeatmapKind::kTrainedNet;
  throw ConfigError("unknown heatmap extractor '" + s + "' (expected linear_bank or trained_net)");
}
inline std::string to_string(HeatmapKind k) { return k == HeatmapKind::kLinearBank ? "linear_bank" : "trained_net"; }

// Difference of two Gaussians normalized over the same support, so the taps
// sum to zero up to rounding.
inline Kernel2D dog_kernel(double sigma_inner, double sigma_outer) {
  const int r = std::max(1, static_cast<int>(std::ceil(2.0 * sigma_outer)));
  Kernel2D k{r, std::vector<double>(static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)))};
  double s1 = 0.0, s2 = 0.0;
  std::vector<double> g1(k.taps.size()), g2(k.taps.size());
  for (int dy = -r, i = 0; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx, ++i) {
      const double d2 = dx * dx + dy * dy;
      s1 += (g1[i] = std::exp(-d2 / (2.0 * sigma_inner * sigma_inner)));
      s2 += (g2[i] = std::exp(-d2 / (2.0 * sigma_outer * sigma_outer)));
    }
  for (std::size_t i = 0; i < k.taps.size(); ++i) k.taps[i] = g1[i] / s1 - g2[i] / s2;
  return k;
}

inline std::vector<Kernel2D> dog_bank(int count) {
  std::vector<Kernel2D> bank;
  for (int k = 0; k < count; ++k) {
    const double s = 0.5 + 0.2 * k;
    bank.push_back(dog_kernel(s, 1.6 * s));
  }
  return bank;
}

// Heatmap network: the score-net U-Net with K outputs. Its input is the image
// plus fixed row and column ramps in [-1, 1]. Convolutions alone are
// translation equivariant, so without the ramps a net fed almost pure noise
// (large t) cannot put the keypoint prior anywhere in particular.
inline constexpr int kHeatmapInputChannels = 3;

inline UNetConfig heatmap_net_config(int image_size, int keypoints, int base_channels, int depth, int time_embed_dim) {
  UNetConfig c;
  c.image_size = image_size;
  c.in_channels = kHeatmapInputChannels;
  c.out_channels = keypoints;
  c.base_channels = base_channels;
  c.depth = depth;
  c.time_embed_dim = time_embed_dim;
  return c;
}

template <typename S>
Tensor<S> with_coordinates(const Tensor<S>& x) {
  const int h = x.height(), w = x.width();
  Tensor<S> out(kHeatmapInputChannels, h, w);
  std::copy(x.values().begin(), x.values().end(), out.channel(0).begin());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      out(1, r, c) = static_cast<S>(h > 1 ? 2.0 * r / (h - 1) - 1.0 : 0.0);
      out(2, r, c) = static_cast<S>(w > 1 ? 2.0 * c / (w - 1) - 1.0 : 0.0);
    }
  return out;
}

template <typename S>
class HeatmapExtractor {
 public:
  HeatmapExtractor() = default;

  static HeatmapExtractor linear_bank(int keypoints, double heat_sigma = 1.5) {
    if (keypoints <= 0) throw ConfigError("heatmap: keypoints must be positive");
    HeatmapExtractor h;
    h.kind_ = HeatmapKind::kLinearBank;
    h.keypoints_ = keypoints;
    h.heat_sigma_ = heat_sigma;
    h.bank_ = dog_bank(keypoints);
    return h;
  }

  // `steps` is the schedule length T the time embedding is normalized by.
  static HeatmapExtractor trained_net(UNet<S> net, int steps, double heat_sigma = 1.5) {
    if (net.config().in_channels != kHeatmapInputChannels)
      throw ConfigError("heatmap: network must take the image plus two coordinate channels");
    if (steps < 1) throw ConfigError("heatmap: steps must be positive");
    HeatmapExtractor h;
    h.kind_ = HeatmapKind::kTrainedNet;
    h.keypoints_ = net.config().out_channels;
    h.heat_sigma_ = heat_sigma;
    h.steps_ = steps;
    h.net_ = std::move(net);
    return h;
  }

  HeatmapKind kind() const { return kind_; }
  int keypoints() const { return keypoints_; }
  double heat_sigma() const { return heat_sigma_; }
  int steps() const { return steps_; }
  const std::vector<Kernel2D>& bank() const { return bank_; }
  const UNet<S>& net() const { return net_; }
  UNet<S>& net() { return net_; }

  template <typename T>
  HeatmapExtractor<T> cast() const {
    HeatmapExtractor<T> h;
    h.kind_ = kind_;
    h.keypoints_ = keypoints_;
    h.heat_sigma_ = heat_sigma_;
    h.steps_ = steps_;
    h.bank_ = bank_;
    if (kind_ == HeatmapKind::kTrainedNet) h.net_ = net_.template cast<T>();
    return h;
  }

  Tensor<S> forward(const Tensor<S>& x, int t) const {
    require_single_channel(x, "heatmap_forward");
    if (kind_ == HeatmapKind::kTrainedNet) {
      if (t < 1 || t > steps_)
        throw ConfigError("heatmap_forward: step " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
      return net_.forward(with_coordinates(x), t, steps_);
    }
    Tensor<S> out(keypoints_, x.height(), x.width());
    for (int k = 0; k < keypoints_; ++k) {
      const Tensor<S> r = correlate_reflect(x, bank_[k]);
      std::copy(r.values().begin(), r.values().end(), out.channel(k).begin());
    }
    return out;
  }

  // Vector-Jacobian product: d/dx <dh, H(x, t)>.
  Tensor<S> input_gradient(const Tensor<S>& x, int t, const Tensor<S>& dh) const {
    require_single_channel(x, "heatmap input_gradient");
    if (dh.channels() != keypoints_ || dh.height() != x.height() || dh.width() != x.width())
      throw ShapeError("heatmap input_gradient: cotangent shape " + dh.shape().str());
    if (kind_ == HeatmapKind::kTrainedNet) {
      UNetCache<S> cache;
      net_.forward(with_coordinates(x), t, steps_, &cache);
      ParamSet<S> scratch = net_.params().zeros_like();
      const Tensor<S> g = net_.backward(cache, dh, scratch, true);
      Tensor<S> out(x.shape());
      std::copy(g.channel(0).begin(), g.channel(0).end(), out.values().begin());
      return out;
    }
    Tensor<S> g(x.shape());
    for (int k = 0; k < keypoints_; ++k) {
      Tensor<S> ch(1, x.height(), x.width());
      std::copy(dh.channel(k).begin(), dh.channel(k).end(), ch.values().begin());
      g += correlate_reflect_adjoint(ch, bank_[k]);
    }
    return g;
  }

 private:
  template <typename>
  friend class HeatmapExtractor;

  HeatmapKind kind_ = HeatmapKind::kLinearBank;
  int keypoints_ = 0;
  double heat_sigma_ = 1.5;
  int steps_ = 1;
  std::vector<Kernel2D> bank_;
  UNet<S> net_;
};

template <typename S>
Tensor<S> heatmap_forward(const HeatmapExtractor<S>& h, const Tensor<S>& x, int t) {
  return h.forward(x, t);
}

// 0.5 ||H(x_t, t) - H(c_t, t)||^2
template <typename S>
double energy_h(const HeatmapExtractor<S>& h, const Tensor<S>& x_t, const Tensor<S>& c_t, int t) {
  require_same_shape(x_t, c_t, "energy_h");
  return 0.5 * squared_distance(h.forward(x_t, t), h.forward(c_t, t));
}

// Gradient with respect to x_t only; c_t is held constant.
template <typename S>
Tensor<S> grad_energy_h(const HeatmapExtractor<S>& h, const Tensor<S>& x_t, const Tensor<S>& c_t, int t) {
  require_same_shape(x_t, c_t, "grad_energy_h");
  return h.input_gradient(x_t, t, h.forward(x_t, t) - h.forward(c_t, t));
}

// ---------------------------------------------------------------------------
// Combined energy

template <typename S>
struct GuidanceConfig {
  double lambda_h = 100.0;
  double lambda_f = 0.5;
  HighPassFilter filter;
  std::shared_ptr<const HeatmapExtractor<S>> heatmap;  // required when lambda_h > 0

  void validate() const {
    if (!(lambda_h >= 0.0) || !(lambda_f >= 0.0)) throw ConfigError("guidance: weights must be non-negative");
    if (lambda_h > 0.0 && !heatmap) throw ConfigError("guidance: lambda_h > 0 requires a heatmap extractor");
  }
};

// lambda_h grad E_h + lambda_f grad E_f. Terms with zero weight are skipped.
template <typename S>
Tensor<S> combined_guidance_grad(const GuidanceConfig<S>& cfg, const Tensor<S>& x_t, const Tensor<S>& c_t, int t) {
  cfg.validate();
  require_same_shape(x_t, c_t, "combined_guidance_grad");
  Tensor<S> g(x_t.shape());
  if (cfg.lambda_h != 0.0) g += static_cast<S>(cfg.lambda_h) * grad_energy_h(*cfg.heatmap, x_t, c_t, t);
  if (cfg.lambda_f != 0.0) g += static_cast<S>(cfg.lambda_f) * grad_energy_f(cfg.filter, x_t, c_t);
  return g;
}

template <typename S>
double combined_energy(const GuidanceConfig<S>& cfg, const Tensor<S>& x_t, const Tensor<S>& c_t, int t) {
  double e = 0.0;
  if (cfg.lambda_h != 0.0) e += cfg.lambda_h * energy_h(*cfg.heatmap, x_t, c_t, t);
  if (cfg.lambda_f != 0.0) e += cfg.lambda_f * energy_f(cfg.filter, x_t, c_t);
  return e;
}

}  // namespace gsde
