#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "gsde/params.hpp"
#include "gsde/tensor.hpp"

// Layer primitives with hand-written backward rules. Each forward that needs
// state for its backward pass writes it into a caller-owned cache.
namespace gsde::layers {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatrixMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatrixMap = Eigen::Map<const RowMatrix<S>>;

// 3x3 convolution, zero padding 1, stride 1 or 2.
struct Conv3x3 {
  std::size_t weight = 0;  // (out, in, 3, 3)
  std::size_t bias = 0;    // (out)
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;

  int out_size(int n) const { return (n - 1) / stride + 1; }
};

template <typename S>
Conv3x3 add_conv(ParamSet<S>& params, const std::string& name, int in, int out, int stride, InitScheme init) {
  Conv3x3 c;
  c.in_channels = in;
  c.out_channels = out;
  c.stride = stride;
  c.weight = params.add(name + ".weight", {out, in, 3, 3}, init);
  c.bias = params.add(name + ".bias", {out}, InitScheme::kZero);
  return c;
}

template <typename S>
struct ConvCache {
  RowMatrix<S> cols;  // (in*9, out_h*out_w)
  int in_height = 0;
  int in_width = 0;
};

// Output columns [lo, hi) whose input column ox*stride + kx - 1 lies inside [0, W).
inline std::pair<int, int> valid_range(int kx, int stride, int out_w, int W) {
  int lo = 0;
  while (lo < out_w && lo * stride + kx - 1 < 0) ++lo;
  int hi = out_w;
  while (hi > lo && (hi - 1) * stride + kx - 1 >= W) --hi;
  return {lo, hi};
}

template <typename S>
void im2col(const Tensor<S>& x, int stride, int out_h, int out_w, RowMatrix<S>& cols) {
  const int H = x.height(), W = x.width();
  cols.resize(static_cast<Eigen::Index>(x.channels()) * 9, static_cast<Eigen::Index>(out_h) * out_w);
  for (int ci = 0; ci < x.channels(); ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        S* row = cols.data() + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * cols.cols();
        const auto [lo, hi] = valid_range(kx, stride, out_w, W);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          S* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + out_w, S(0));
            continue;
          }
          const S* src = x.data() + (static_cast<std::size_t>(ci) * H + iy) * W + (kx - 1);
          std::fill(dst, dst + lo, S(0));
          if (stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          }
          std::fill(dst + hi, dst + out_w, S(0));
        }
      }
    }
  }
}

template <typename S>
void col2im(const RowMatrix<S>& cols, int stride, int out_h, int out_w, Tensor<S>& dx) {
  const int H = dx.height(), W = dx.width();
  for (int ci = 0; ci < dx.channels(); ++ci) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const S* row = cols.data() + static_cast<std::size_t>((ci * 3 + ky) * 3 + kx) * cols.cols();
        const auto [lo, hi] = valid_range(kx, stride, out_w, W);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= H) continue;
          const S* src = row + static_cast<std::size_t>(oy) * out_w;
          S* dst = dx.data() + (static_cast<std::size_t>(ci) * H + iy) * W + (kx - 1);
          for (int ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
        }
      }
    }
  }
}

template <typename S>
Tensor<S> conv_forward(const ParamSet<S>& params, const Conv3x3& conv, const Tensor<S>& x, ConvCache<S>& cache) {
  if (x.channels() != conv.in_channels)
    throw ShapeError("conv: expected " + std::to_string(conv.in_channels) + " input channels, got " +
                     std::to_string(x.channels()));
  const int oh = conv.out_size(x.height()), ow = conv.out_size(x.width());
  cache.in_height = x.height();
  cache.in_width = x.width();
  im2col(x, conv.stride, oh, ow, cache.cols);

  Tensor<S> y(conv.out_channels, oh, ow);
  const auto& w = params[conv.weight].values;
  const auto& b = params[conv.bias].values;
  ConstMatrixMap<S> wm(w.data(), conv.out_channels, static_cast<Eigen::Index>(conv.in_channels) * 9);
  MatrixMap<S> ym(y.data(), conv.out_channels, static_cast<Eigen::Index>(oh) * ow);
  ym.noalias() = wm * cache.cols;
  for (int co = 0; co < conv.out_channels; ++co) ym.row(co).array() += b[co];
  return y;
}

// Accumulates weight/bias gradients into `grads`; returns dL/dx when requested.
template <typename S>
Tensor<S> conv_backward(const ParamSet<S>& params, const Conv3x3& conv, const ConvCache<S>& cache,
                        const Tensor<S>& dy, ParamSet<S>& grads, bool want_input_grad) {
  const Eigen::Index n = static_cast<Eigen::Index>(dy.height()) * dy.width();
  const Eigen::Index k = static_cast<Eigen::Index>(conv.in_channels) * 9;
  ConstMatrixMap<S> dym(dy.data(), conv.out_channels, n);

  MatrixMap<S> dw(grads[conv.weight].values.data(), conv.out_channels, k);
  dw.noalias() += dym * cache.cols.transpose();
  auto& db = grads[conv.bias].values;
  for (int co = 0; co < conv.out_channels; ++co) db[co] += dym.row(co).sum();

  if (!want_input_grad) return {};
  ConstMatrixMap<S> wm(params[conv.weight].values.data(), conv.out_channels, k);
  RowMatrix<S> dcols = wm.transpose() * dym;
  Tensor<S> dx(conv.in_channels, cache.in_height, cache.in_width);
  col2im(dcols, conv.stride, dy.height(), dy.width(), dx);
  return dx;
}

// Affine map from the time embedding to one additive bias per channel.
struct TimeBias {
  std::size_t weight = 0;  // (channels, embed_dim)
  std::size_t bias = 0;    // (channels)
  int channels = 0;
  int embed_dim = 0;
};

template <typename S>
TimeBias add_time_bias(ParamSet<S>& params, const std::string& name, int channels, int embed_dim) {
  TimeBias tb;
  tb.channels = channels;
  tb.embed_dim = embed_dim;
  tb.weight = params.add(name + ".weight", {channels, embed_dim}, InitScheme::kFanInNormal);
  tb.bias = params.add(name + ".bias", {channels}, InitScheme::kZero);
  return tb;
}

template <typename S>
std::vector<S> time_bias_forward(const ParamSet<S>& params, const TimeBias& tb, const std::vector<S>& embedding) {
  std::vector<S> out(tb.channels);
  const auto& w = params[tb.weight].values;
  const auto& b = params[tb.bias].values;
  for (int c = 0; c < tb.channels; ++c) {
    S acc = b[c];
    for (int j = 0; j < tb.embed_dim; ++j) acc += w[static_cast<std::size_t>(c) * tb.embed_dim + j] * embedding[j];
    out[c] = acc;
  }
  return out;
}

// `dbias` is dL/d(per-channel bias), i.e. the spatial sum of the upstream gradient.
template <typename S>
void time_bias_backward(const TimeBias& tb, const std::vector<S>& embedding, const std::vector<S>& dbias,
                        ParamSet<S>& grads) {
  auto& gw = grads[tb.weight].values;
  auto& gb = grads[tb.bias].values;
  for (int c = 0; c < tb.channels; ++c) {
    gb[c] += dbias[c];
    for (int j = 0; j < tb.embed_dim; ++j) gw[static_cast<std::size_t>(c) * tb.embed_dim + j] += dbias[c] * embedding[j];
  }
}

template <typename S>
void add_channel_bias(Tensor<S>& x, const std::vector<S>& bias) {
  for (int c = 0; c < x.channels(); ++c)
    for (auto& v : x.channel(c)) v += bias[c];
}

template <typename S>
std::vector<S> channel_sums(const Tensor<S>& x) {
  std::vector<S> out(x.channels(), S(0));
  for (int c = 0; c < x.channels(); ++c)
    for (S v : x.channel(c)) out[c] += v;
  return out;
}

// Sinusoidal embedding of the normalized time t/T. Angular frequencies are
// spaced geometrically from 1 to 1000 so the whole (0,1] range is resolved.
template <typename S>
std::vector<S> time_embedding(int t, int T, int dim) {
  const int half = dim / 2;
  std::vector<S> out(dim, S(0));
  const double tau = static_cast<double>(t) / static_cast<double>(T);
  for (int i = 0; i < half; ++i) {
    const double freq = half > 1 ? std::pow(1000.0, static_cast<double>(i) / (half - 1)) : 1.0;
    out[i] = static_cast<S>(std::sin(tau * freq));
    out[half + i] = static_cast<S>(std::cos(tau * freq));
  }
  return out;
}

template <typename S>
S sigmoid(S z) {
  return S(1) / (S(1) + std::exp(-z));
}

template <typename S>
using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

template <typename S>
Tensor<S> silu(const Tensor<S>& z) {
  Tensor<S> out(z.shape());
  const auto n = static_cast<Eigen::Index>(z.size());
  ConstArrayMap<S> zi(z.data(), n);
  ArrayMap<S>(out.data(), n) = zi / (S(1) + (-zi).exp());
  return out;
}

// dL/dz given dL/dy for y = silu(z).
template <typename S>
Tensor<S> silu_backward(const Tensor<S>& z, const Tensor<S>& dy) {
  Tensor<S> dz(z.shape());
  const auto n = static_cast<Eigen::Index>(z.size());
  ConstArrayMap<S> zi(z.data(), n);
  ConstArrayMap<S> gi(dy.data(), n);
  const Eigen::Array<S, Eigen::Dynamic, 1> s = S(1) / (S(1) + (-zi).exp());
  ArrayMap<S>(dz.data(), n) = gi * s * (S(1) + zi * (S(1) - s));
  return dz;
}

// Nearest-neighbour 2x upsampling.
template <typename S>
Tensor<S> upsample2x(const Tensor<S>& x) {
  Tensor<S> out(x.channels(), x.height() * 2, x.width() * 2);
  for (int c = 0; c < x.channels(); ++c)
    for (int r = 0; r < out.height(); ++r)
      for (int col = 0; col < out.width(); ++col) out(c, r, col) = x(c, r / 2, col / 2);
  return out;
}

template <typename S>
Tensor<S> upsample2x_backward(const Tensor<S>& dy) {
  Tensor<S> dx(dy.channels(), dy.height() / 2, dy.width() / 2);
  for (int c = 0; c < dy.channels(); ++c)
    for (int r = 0; r < dy.height(); ++r)
      for (int col = 0; col < dy.width(); ++col) dx(c, r / 2, col / 2) += dy(c, r, col);
  return dx;
}

// Splits a channel-concatenated gradient back into its two parts.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& x, int first) {
  Tensor<S> a(first, x.height(), x.width());
  Tensor<S> b(x.channels() - first, x.height(), x.width());
  std::copy(x.data(), x.data() + a.size(), a.data());
  std::copy(x.data() + a.size(), x.data() + x.size(), b.data());
  return {std::move(a), std::move(b)};
}

}  // namespace gsde::layers
