#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "gsde/error.hpp"

namespace gsde {

// 64-byte aligned storage. Eigen's vectorized kernels pick their loop peeling
// from the buffer address, so unaligned heap blocks would make float results
// depend on where an allocation happened to land.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(channels) + "," + std::to_string(height) + "," +
           std::to_string(width) + ")";
  }
};

// Dense (channels, height, width) image array, row-major.
template <typename S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;
  Tensor(int channels, int height, int width, S fill = S(0))
      : shape_{channels, height, width}, data_(shape_.size(), fill) {
    if (channels < 0 || height < 0 || width < 0) throw ShapeError("negative tensor dimension");
  }
  explicit Tensor(Shape shape, S fill = S(0)) : Tensor(shape.channels, shape.height, shape.width, fill) {}

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(shape_.height) * shape_.width; }
  bool empty() const { return data_.empty(); }

  S& operator()(int c, int r, int col) { return data_[index(c, r, col)]; }
  const S& operator()(int c, int r, int col) const { return data_[index(c, r, col)]; }
  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::span<S> values() { return data_; }
  std::span<const S> values() const { return data_; }
  std::span<S> channel(int c) { return {data_.data() + c * plane(), plane()}; }
  std::span<const S> channel(int c) const { return {data_.data() + c * plane(), plane()}; }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(S a) {
    for (auto& v : data_) v *= a;
    return *this;
  }
  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(S s, Tensor a) { return a *= s; }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return out;
  }

  bool operator==(const Tensor& o) const = default;

 private:
  std::size_t index(int c, int r, int col) const {
    return (static_cast<std::size_t>(c) * shape_.height + r) * shape_.width + col;
  }
  void check_same(const Tensor& o, const char* op) const {
    if (!(shape_ == o.shape_))
      throw ShapeError(std::string("tensor ") + op + ": shape " + shape_.str() + " vs " + o.shape_.str());
  }

  Shape shape_;
  AlignedVector<S> data_;
};

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const std::string& what) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(what + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <typename S>
void require_single_channel(const Tensor<S>& a, const std::string& what) {
  if (a.channels() != 1 || a.height() <= 0 || a.width() <= 0)
    throw ShapeError(what + ": expected a single-channel 2-D image, got " + a.shape().str());
}

template <typename S>
double squared_norm(const Tensor<S>& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(a[i]);
  return acc;
}

template <typename S>
double squared_distance(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "squared_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

template <typename S>
bool all_finite(const Tensor<S>& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](S v) { return std::isfinite(v); });
}

// Stacks equally sized tensors along the channel axis.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ShapeError("concat_channels: spatial mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<S> out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

// Maps [0,1] pixel data to the [-1,1] diffusion range and back.
template <typename S>
Tensor<S> to_signed_range(Tensor<S> x) {
  for (auto& v : x.values()) v = S(2) * v - S(1);
  return x;
}

template <typename S>
Tensor<S> to_unit_range(Tensor<S> x) {
  for (auto& v : x.values()) v = (v + S(1)) / S(2);
  return x;
}

template <typename S>
Tensor<S> clamp(Tensor<S> x, S lo, S hi) {
  for (auto& v : x.values()) v = std::clamp(v, lo, hi);
  return x;
}

}  // namespace gsde
