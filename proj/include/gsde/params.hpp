#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "gsde/error.hpp"
#include "gsde/tensor.hpp"

namespace gsde {

enum class InitScheme { kFanInNormal, kZero };

inline const char* to_string(InitScheme s) { return s == InitScheme::kZero ? "zero" : "fan_in_normal"; }

template <typename S>
struct NamedArray {
  std::string name;
  std::vector<int> dims;
  InitScheme init = InitScheme::kZero;
  AlignedVector<S> values;

  std::size_t size() const { return values.size(); }
};

inline std::size_t element_count(const std::vector<int>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

// Ordered collection of named arrays. Used for network parameters, their
// gradients and optimizer moments; the three always share one layout.
template <typename S>
class ParamSet {
 public:
  std::size_t add(std::string name, std::vector<int> dims, InitScheme init) {
    NamedArray<S> a;
    a.name = std::move(name);
    a.values.assign(element_count(dims), S(0));
    a.dims = std::move(dims);
    a.init = init;
    arrays_.push_back(std::move(a));
    return arrays_.size() - 1;
  }

  std::size_t size() const { return arrays_.size(); }
  NamedArray<S>& operator[](std::size_t i) { return arrays_[i]; }
  const NamedArray<S>& operator[](std::size_t i) const { return arrays_[i]; }
  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }

  const NamedArray<S>* find(const std::string& name) const {
    for (const auto& a : arrays_)
      if (a.name == name) return &a;
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.size();
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet out = *this;
    for (auto& a : out.arrays_) std::fill(a.values.begin(), a.values.end(), S(0));
    return out;
  }

  template <typename T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (const auto& a : arrays_) {
      const auto idx = out.add(a.name, a.dims, a.init);
      for (std::size_t i = 0; i < a.size(); ++i) out[idx].values[i] = static_cast<T>(a.values[i]);
    }
    return out;
  }

  bool same_layout(const ParamSet& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (arrays_[i].name != o.arrays_[i].name || arrays_[i].dims != o.arrays_[i].dims) return false;
    return true;
  }

  bool operator==(const ParamSet& o) const {
    if (!same_layout(o)) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (arrays_[i].values != o.arrays_[i].values) return false;
    return true;
  }

  ParamSet& operator+=(const ParamSet& o) {
    require_layout(o, "ParamSet +=");
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < arrays_[i].size(); ++j) arrays_[i].values[j] += o.arrays_[i].values[j];
    return *this;
  }
  ParamSet& operator*=(S k) {
    for (auto& a : arrays_)
      for (auto& v : a.values) v *= k;
    return *this;
  }

  void require_layout(const ParamSet& o, const std::string& what) const {
    if (!same_layout(o)) throw ShapeError(what + ": parameter layouts differ");
  }

  // Visits every scalar as (array index, element index, value&).
  void for_each_scalar(const std::function<void(std::size_t, std::size_t, S&)>& fn) {
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < arrays_[i].size(); ++j) fn(i, j, arrays_[i].values[j]);
  }

 private:
  std::vector<NamedArray<S>> arrays_;
};

}  // namespace gsde
