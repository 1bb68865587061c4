#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "gsde/guidance.hpp"
#include "gsde/optimizer.hpp"
#include "gsde/synth.hpp"

namespace gsde {

// K-channel target: channel k is exp(-d^2 / (2 sigma^2)) around keypoint k.
template <typename S = float>
Tensor<S> render_heatmap(const Keypoints& kps, int image_size, double sigma) {
  Tensor<S> h(kNumKeypoints, image_size, image_size);
  for (int k = 0; k < kNumKeypoints; ++k)
    for (int r = 0; r < image_size; ++r)
      for (int c = 0; c < image_size; ++c) {
        const double dr = r - kps[k].row, dc = c - kps[k].col;
        h(k, r, c) = static_cast<S>(std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma)));
      }
  return h;
}

struct HeatmapTrainOptions {
  int base_channels = 8;
  int depth = 2;
  int time_embed_dim = 32;
  double heat_sigma = 1.5;
  long steps = 6000;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct HeatmapTrainResult {
  HeatmapExtractor<float> extractor;
  std::vector<double> losses;  // per step

  // Means over the first and last `window` steps.
  double initial_loss(std::size_t window = 50) const { return mean(0, std::min(window, losses.size())); }
  double final_loss(std::size_t window = 50) const {
    const std::size_t n = losses.size();
    return mean(n - std::min(window, n), n);
  }

 private:
  double mean(std::size_t a, std::size_t b) const {
    double s = 0.0;
    for (std::size_t i = a; i < b; ++i) s += losses[i];
    return b > a ? s / static_cast<double>(b - a) : 0.0;
  }
};

// Regresses keypoint heatmaps from forward-perturbed images of either
// modality at t ~ U{1, T}. Per-step stream (seed, step); per sample: index,
// modality, t, eps. Loss is 0.5 ||H(x_t, t) - target||^2, averaged over the batch.
inline HeatmapTrainResult train_heatmap_extractor(const std::vector<const PairedSample*>& samples,
                                                  const NoiseSchedule& sched, const HeatmapTrainOptions& opts,
                                                  const std::function<void(long, double)>& on_step = {}) {
  if (samples.empty()) throw ConfigError("train_heatmap_extractor: empty dataset");
  if (opts.batch_size <= 0 || opts.steps < 0 || !(opts.learning_rate > 0.0) || !(opts.heat_sigma > 0.0))
    throw ConfigError("train_heatmap_extractor: invalid options");
  const int n = samples.front()->vis.height();
  std::vector<Tensor<float>> vis, nir, targets;
  for (const auto* s : samples) {
    if (s->vis.height() != n || s->vis.width() != n) throw ShapeError("train_heatmap_extractor: mixed image sizes");
    vis.push_back(to_signed_range(s->vis));
    nir.push_back(to_signed_range(s->nir));
    targets.push_back(render_heatmap<float>(s->keypoints, n, opts.heat_sigma));
  }
  UNet<float> net(heatmap_net_config(n, kNumKeypoints, opts.base_channels, opts.depth, opts.time_embed_dim),
                  derive_seed(opts.seed, {0}));
  OptimizerConfig oc;
  oc.learning_rate = opts.learning_rate;
  OptimizerState<float> opt = make_optimizer(oc, net.params());
  ParamSet<float> grads = net.params().zeros_like();
  HeatmapTrainResult out;
  const int T = sched.steps();
  for (long step = 1; step <= opts.steps; ++step) {
    Rng rng(opts.seed, {1, static_cast<std::uint64_t>(step)});
    for (auto& a : grads) std::fill(a.values.begin(), a.values.end(), 0.0f);
    double loss = 0.0;
    for (int b = 0; b < opts.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(samples.size()) - 1));
      const bool use_nir = rng.uniform_int(0, 1) == 1;
      const int t = static_cast<int>(rng.uniform_int(1, T));
      const Tensor<float>& x0 = use_nir ? nir[idx] : vis[idx];
      const Tensor<float> x_t = forward_perturb(x0, t, rng.normal_like(x0), sched);
      UNetCache<float> cache;
      Tensor<float> diff = net.forward(with_coordinates(x_t), t, T, &cache) - targets[idx];
      loss += 0.5 * squared_norm(diff);
      diff *= 1.0f / static_cast<float>(opts.batch_size);
      net.backward(cache, diff, grads, false);
    }
    loss /= opts.batch_size;
    if (!std::isfinite(loss))
      throw NumericError("train_heatmap_extractor: non-finite loss at step " + std::to_string(step), step);
    apply_update(net.params(), grads, opt);
    out.losses.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  out.extractor = HeatmapExtractor<float>::trained_net(std::move(net), T, opts.heat_sigma);
  return out;
}

// Location of the maximum of every channel, as (row, col).
template <typename S>
Keypoints heatmap_argmax(const Tensor<S>& h) {
  if (h.channels() != kNumKeypoints) throw ShapeError("heatmap_argmax: expected 5 channels");
  Keypoints kp{};
  for (int k = 0; k < kNumKeypoints; ++k) {
    const auto ch = h.channel(k);
    const auto best = static_cast<int>(std::max_element(ch.begin(), ch.end()) - ch.begin());
    kp[k] = {static_cast<double>(best / h.width()), static_cast<double>(best % h.width())};
  }
  return kp;
}

// Mean Euclidean distance between argmax locations and ground truth. With
// t = 0 the clean source image is fed at step 1; otherwise images are
// perturbed to step t with noise from `noise_seed`.
inline double localization_error(const HeatmapExtractor<float>& h, const std::vector<const PairedSample*>& samples,
                                 const NoiseSchedule& sched, int t, std::uint64_t noise_seed, bool use_nir = false) {
  if (samples.empty()) throw ConfigError("localization_error: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor<float> x0 = to_signed_range(use_nir ? samples[i]->nir : samples[i]->vis);
    Tensor<float> x = x0;
    if (t > 0) {
      Rng rng(noise_seed, {static_cast<std::uint64_t>(i)});
      x = forward_perturb(x0, t, rng.normal_like(x0), sched);
    }
    const Keypoints found = heatmap_argmax(h.forward(x, t > 0 ? t : 1));
    for (int k = 0; k < kNumKeypoints; ++k)
      total += std::hypot(found[k].row - samples[i]->keypoints[k].row, found[k].col - samples[i]->keypoints[k].col);
  }
  return total / static_cast<double>(samples.size() * kNumKeypoints);
}

}  // namespace gsde
