#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gsde/filters.hpp"
#include "gsde/tensor.hpp"

namespace gsde {

inline constexpr double kPsnrCap = 100.0;

// Images in [0, 1].
template <typename S>
double psnr(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "psnr");
  if (a.empty()) throw ShapeError("psnr: empty images");
  const double mse = squared_distance(a, b) / static_cast<double>(a.size());
  if (mse < 1e-10) return kPsnrCap;
  return 10.0 * std::log10(1.0 / mse);
}

struct SsimParams {
  int radius = 3;  // 7x7 window
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_taps(int radius, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) w[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

// Separable Gaussian window average with half-sample symmetric padding.
inline std::vector<double> window_mean(const std::vector<double>& x, int h, int w, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size() / 2);
  std::vector<double> tmp(x.size()), out(x.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += taps[k + r] * x[static_cast<std::size_t>(i * w + reflect_index(j + k, w))];
      tmp[static_cast<std::size_t>(i * w + j)] = acc;
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += taps[k + r] * tmp[static_cast<std::size_t>(reflect_index(i + k, h) * w + j)];
      out[static_cast<std::size_t>(i * w + j)] = acc;
    }
  return out;
}

}  // namespace detail

// Mean local SSIM over single-channel images.
template <typename S>
double ssim(const Tensor<S>& a, const Tensor<S>& b, const SsimParams& p = {}) {
  require_same_shape(a, b, "ssim");
  require_single_channel(a, "ssim");
  const int h = a.height(), w = a.width(), win = 2 * p.radius + 1;
  if (h < win || w < win)
    throw ShapeError("ssim: image " + a.shape().str() + " smaller than the " + std::to_string(win) + "x" +
                     std::to_string(win) + " window");
  const auto taps = detail::gaussian_taps(p.radius, p.sigma);
  const std::size_t n = a.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<double>(a[i]);
    y[i] = static_cast<double>(b[i]);
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::window_mean(x, h, w, taps), my = detail::window_mean(y, h, w, taps);
  const auto mxx = detail::window_mean(xx, h, w, taps), myy = detail::window_mean(yy, h, w, taps);
  const auto mxy = detail::window_mean(xy, h, w, taps);
  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range), c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double vx = mxx[i] - mx[i] * mx[i], vy = myy[i] - my[i] * my[i], cxy = mxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Classification metrics

using ConfusionMatrix = std::vector<std::vector<int>>;  // [truth][prediction]

inline ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& truth, int n_classes) {
  if (preds.size() != truth.size())
    throw ShapeError("confusion_matrix: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  ConfusionMatrix m(static_cast<std::size_t>(n_classes), std::vector<int>(static_cast<std::size_t>(n_classes), 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= n_classes || truth[i] < 0 || truth[i] >= n_classes)
      throw ShapeError("confusion_matrix: label out of range");
    ++m[truth[i]][preds[i]];
  }
  return m;
}

// Per-class F1; 0 for classes with no predictions and no instances.
inline std::vector<double> per_class_f1(const ConfusionMatrix& m) {
  const std::size_t k = m.size();
  std::vector<double> f1(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double tp = m[c][c], fp = 0.0, fn = 0.0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += m[o][c];
      fn += m[c][o];
    }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    f1[c] = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return f1;
}

inline double macro_f1(const std::vector<int>& preds, const std::vector<int>& truth, int n_classes) {
  const auto f1 = per_class_f1(confusion_matrix(preds, truth, n_classes));
  return std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(n_classes);
}

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& truth) {
  if (preds.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Translation quality

struct QualityReport {
  std::vector<double> psnr;
  std::vector<double> ssim;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
};

namespace detail {
inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(v.size()));
}
}  // namespace detail

// Compares predictions with references, both in [0, 1].
template <typename S>
QualityReport evaluate_quality(const std::vector<Tensor<S>>& preds, const std::vector<Tensor<S>>& refs) {
  if (preds.size() != refs.size()) throw ShapeError("evaluate_quality: prediction and reference counts differ");
  QualityReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.psnr.push_back(psnr(preds[i], refs[i]));
    r.ssim.push_back(ssim(preds[i], refs[i]));
  }
  detail::mean_std(r.psnr, r.psnr_mean, r.psnr_std);
  detail::mean_std(r.ssim, r.ssim_mean, r.ssim_std);
  return r;
}

}  // namespace gsde
