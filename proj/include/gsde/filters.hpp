#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gsde/tensor.hpp"

namespace gsde {

// Square (2r+1)x(2r+1) correlation kernel.
struct Kernel2D {
  int radius = 0;
  std::vector<double> taps;

  int width() const { return 2 * radius + 1; }
  double at(int dy, int dx) const { return taps[static_cast<std::size_t>((dy + radius) * width() + (dx + radius))]; }
  double& at(int dy, int dx) { return taps[static_cast<std::size_t>((dy + radius) * width() + (dx + radius))]; }

  double sum() const {
    double s = 0.0;
    for (double v : taps) s += v;
    return s;
  }
  Kernel2D flipped() const {
    Kernel2D k{radius, std::vector<double>(taps.rbegin(), taps.rend())};
    return k;
  }
  bool symmetric() const { return flipped().taps == taps; }
};

inline Kernel2D laplacian3x3() { return {1, {0, -1, 0, -1, 4, -1, 0, -1, 0}}; }

// Normalized, truncated at ceil(3 sigma).
inline Kernel2D gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  Kernel2D k{r, std::vector<double>(static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)))};
  double total = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) total += (k.at(dy, dx) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
  for (double& v : k.taps) v /= total;
  return k;
}

// Half-sample symmetric reflection (d c b a | a b c d | d c b a); valid for
// offsets up to one image length outside the border.
inline int reflect_index(int p, int n) {
  if (p < 0) return -p - 1;
  if (p >= n) return 2 * n - p - 1;
  return p;
}

// y(r, c) = sum_k k(dy, dx) x(reflect(r + dy), reflect(c + dx)), per channel.
template <typename S>
Tensor<S> correlate_reflect(const Tensor<S>& x, const Kernel2D& k) {
  const int H = x.height(), W = x.width(), R = k.radius;
  if (R > H || R > W) throw ShapeError("kernel radius " + std::to_string(R) + " exceeds image " + x.shape().str());
  Tensor<S> y(x.shape());
  for (int ch = 0; ch < x.channels(); ++ch)
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        S acc = S(0);
        for (int dy = -R; dy <= R; ++dy) {
          const int rr = reflect_index(r + dy, H);
          for (int dx = -R; dx <= R; ++dx) acc += static_cast<S>(k.at(dy, dx)) * x(ch, rr, reflect_index(c + dx, W));
        }
        y(ch, r, c) = acc;
      }
  return y;
}

// Exact transpose of correlate_reflect: scatters every output back to the
// (reflected) input taps it read from.
template <typename S>
Tensor<S> correlate_reflect_adjoint(const Tensor<S>& y, const Kernel2D& k) {
  const int H = y.height(), W = y.width(), R = k.radius;
  if (R > H || R > W) throw ShapeError("kernel radius " + std::to_string(R) + " exceeds image " + y.shape().str());
  Tensor<S> x(y.shape());
  for (int ch = 0; ch < y.channels(); ++ch)
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const S g = y(ch, r, c);
        for (int dy = -R; dy <= R; ++dy) {
          const int rr = reflect_index(r + dy, H);
          for (int dx = -R; dx <= R; ++dx) x(ch, rr, reflect_index(c + dx, W)) += static_cast<S>(k.at(dy, dx)) * g;
        }
      }
  return x;
}

}  // namespace gsde
