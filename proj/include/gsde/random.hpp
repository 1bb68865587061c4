#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "gsde/tensor.hpp"

namespace gsde {

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for the stream identified by (master, path...). Order-sensitive.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(master);
  for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// One deterministic random stream. Every consumer in the library draws in a
// fixed, documented order so runs are reproducible from their seeds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) : engine_(derive_seed(master, path)) {}

  // Uniform integer in [lo, hi].
  long uniform_int(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }

  template <typename S>
  Tensor<S> normal_tensor(int channels, int height, int width) {
    Tensor<S> out(channels, height, width);
    for (auto& v : out.values()) v = static_cast<S>(normal_(engine_));
    return out;
  }
  template <typename S>
  Tensor<S> normal_like(const Tensor<S>& like) {
    return normal_tensor<S>(like.channels(), like.height(), like.width());
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace gsde
