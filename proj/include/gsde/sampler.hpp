#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "gsde/guidance.hpp"
#include "gsde/random.hpp"
#include "gsde/score_net.hpp"

namespace gsde {

struct SamplerOptions {
  int num_steps = 0;  // 0 means the schedule length T
  std::uint64_t seed = 0;
  bool record_trajectory = false;
};

template <typename S>
struct Snapshot {
  int t = 0;
  Tensor<S> x;
};

template <typename S>
using Trajectory = std::vector<Snapshot<S>>;

template <typename S>
struct SampleResult {
  Tensor<S> x0;
  std::optional<Trajectory<S>> trajectory;
};

template <typename S>
Tensor<S> reverse_step_beta(const Tensor<S>& x_t, double beta, const Tensor<S>& score_total, const Tensor<S>& z) {
  require_same_shape(x_t, score_total, "reverse_step score");
  require_same_shape(x_t, z, "reverse_step noise");
  const S a = static_cast<S>(1.0 + 0.5 * beta), b = static_cast<S>(beta), c = static_cast<S>(std::sqrt(beta));
  Tensor<S> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_t[i] + b * score_total[i] + c * z[i];
  return out;
}

// One Euler-Maruyama step of the reverse VP-SDE with dt = -1:
//   x_{t-1} = x_t + 0.5 beta_t x_t + beta_t score + sqrt(beta_t) z
template <typename S>
Tensor<S> reverse_step(const Tensor<S>& x_t, int t, const Tensor<S>& score_total, const NoiseSchedule& sched,
                       const Tensor<S>& z) {
  return reverse_step_beta(x_t, sched.beta(t), score_total, z);
}

// Visited steps, descending from T. With num_steps < T the grid is
// floor(i T / n) for i = n..1, and each jump uses the effective
// beta = 1 - ab_t / ab_prev.
inline std::vector<int> reverse_grid(const NoiseSchedule& sched, int num_steps) {
  const int T = sched.steps();
  const int n = num_steps == 0 ? T : num_steps;
  if (n < 1 || n > T) throw ConfigError("sampling: num_steps must lie in [1, " + std::to_string(T) + "]");
  std::vector<int> grid;
  for (int i = n; i >= 1; --i) grid.push_back(static_cast<int>(static_cast<long>(i) * T / n));
  return grid;
}

inline double jump_beta(const NoiseSchedule& sched, int t, int t_prev) {
  if (t_prev == t - 1) return sched.beta(t);
  const double ab_prev = t_prev == 0 ? 1.0 : sched.alpha_bar(t_prev);
  return 1.0 - sched.alpha_bar(t) / ab_prev;
}

// Generic ancestral reverse chain. Draw order on the seeded stream: x_T, then
// for every visited t: z (skipped at the final step, where z = 0), then
// whatever `score_total(x_t, t, rng)` consumes.
template <typename S, typename ScoreFn>
SampleResult<S> run_reverse_chain(const Shape& shape, const NoiseSchedule& sched, const SamplerOptions& opts,
                                  ScoreFn&& score_total) {
  const std::vector<int> grid = reverse_grid(sched, opts.num_steps);
  Rng rng(opts.seed);
  Tensor<S> x = rng.normal_tensor<S>(shape.channels, shape.height, shape.width);
  SampleResult<S> out;
  if (opts.record_trajectory) out.trajectory.emplace().push_back({grid.front(), x});
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const int t = grid[i];
    const int t_prev = i + 1 < grid.size() ? grid[i + 1] : 0;
    const bool last = i + 1 == grid.size();
    const Tensor<S> z = last ? Tensor<S>(shape) : rng.normal_tensor<S>(shape.channels, shape.height, shape.width);
    const Tensor<S> s = score_total(x, t, rng);
    x = reverse_step_beta(x, jump_beta(sched, t, t_prev), s, z);
    if (!all_finite(x)) throw NumericError("sampler: non-finite state at step t=" + std::to_string(t), t);
    if (opts.record_trajectory && !last) out.trajectory->push_back({t_prev, x});
  }
  x = clamp(std::move(x), S(-1), S(1));
  if (opts.record_trajectory) out.trajectory->push_back({0, x});
  out.x0 = std::move(x);
  return out;
}

// Conditional translation of source image `c` (in [-1, 1]). The clean source
// feeds the network; a freshly perturbed copy c_t feeds the energies. The c_t
// noise is drawn even without guidance so both paths consume the same stream.
template <typename S>
SampleResult<S> translate(const ScoreNet<S>& net, const std::type_identity_t<GuidanceConfig<S>>* guidance, const Tensor<S>& c,
                          const NoiseSchedule& sched, const SamplerOptions& opts) {
  if (!net.config.conditional()) throw ConfigError("translate: network has no condition channel");
  require_single_channel(c, "translate source");
  if (c.height() != net.config.image_size || c.width() != net.config.image_size)
    throw ShapeError("translate: source " + c.shape().str() + " does not match network image_size " +
                     std::to_string(net.config.image_size));
  if (guidance) guidance->validate();
  return run_reverse_chain<S>(c.shape(), sched, opts, [&](const Tensor<S>& x_t, int t, Rng& rng) {
    const Tensor<S> c_t = forward_perturb(c, t, rng.normal_like(c), sched);
    Tensor<S> s = score_forward(net, x_t, c, t, sched);
    if (guidance) s -= combined_guidance_grad(*guidance, x_t, c_t, t);
    return s;
  });
}

template <typename S>
SampleResult<S> translate(const ScoreNet<S>& net, const GuidanceConfig<S>& guidance, const Tensor<S>& c,
                          const NoiseSchedule& sched, const SamplerOptions& opts) {
  return translate(net, &guidance, c, sched, opts);
}

template <typename S>
SampleResult<S> sample_unconditional(const ScoreNet<S>& net, const NoiseSchedule& sched, const SamplerOptions& opts) {
  if (net.config.conditional()) throw ConfigError("sample_unconditional: network expects a condition channel");
  const Tensor<S> none;
  const int n = net.config.image_size;
  return run_reverse_chain<S>(Shape{1, n, n}, sched, opts, [&](const Tensor<S>& x_t, int t, Rng&) {
    return score_forward(net, x_t, none, t, sched);
  });
}

// Per-image stream seed for image `index` of a batch run under `master`.
inline std::uint64_t image_seed(std::uint64_t master, std::size_t index) {
  return derive_seed(master, {static_cast<std::uint64_t>(index)});
}

}  // namespace gsde
