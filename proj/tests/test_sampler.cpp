#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "gsde/sampler.hpp"
#include "test_util.hpp"

using namespace gsde;

namespace {

ScoreNet<double> random_net(bool conditional, std::uint64_t seed, double scale = 0.1) {
  ScoreNetConfig c;
  c.image_size = 8;
  c.in_channels = conditional ? 2 : 1;
  c.base_channels = 3;
  c.depth = 2;
  c.time_embed_dim = 4;
  auto net = build_network<double>(c, seed);
  Rng rng(seed + 7);
  net.params().for_each_scalar([&](std::size_t, std::size_t, double& v) { v = scale * rng.normal(); });
  return net;
}

ScoreNet<double> fresh_net() {
  ScoreNetConfig c;
  c.image_size = 8;
  c.base_channels = 3;
  c.time_embed_dim = 4;
  return build_network<double>(c, 1);
}

Tensor<double> source_image() { return clamp(test::random_tensor(1, 8, 8, 11, 0.5), -1.0, 1.0); }

}  // namespace

TEST(ReverseStep, Examples) {
  const Tensor<double> x(1, 1, 1, 1.0), s(1, 1, 1, 0.5), zero(1, 1, 1), one(1, 1, 1, 1.0);
  EXPECT_DOUBLE_EQ(reverse_step_beta(x, 0.02, s, zero)[0], 1.02);
  EXPECT_DOUBLE_EQ(reverse_step_beta(x, 0.02, s, one)[0], 1.02 + std::sqrt(0.02));
  const auto sched = make_schedule(1000, 1e-4, 0.02);
  EXPECT_DOUBLE_EQ(reverse_step(x, 1000, s, sched, zero)[0], 1.02);
  EXPECT_DOUBLE_EQ(reverse_step(x, 1, Tensor<double>(1, 1, 1), sched, zero)[0], 1.00005);
}

TEST(ReverseStep, AffineInEachArgument) {
  const auto x = test::random_tensor(1, 4, 4, 1), s = test::random_tensor(1, 4, 4, 2), z = test::random_tensor(1, 4, 4, 3);
  const Tensor<double> zero(1, 4, 4);
  const double beta = 0.013;
  const auto full = reverse_step_beta(x, beta, s, z);
  const auto parts = reverse_step_beta(x, beta, zero, zero) + reverse_step_beta(zero, beta, s, zero) +
                     reverse_step_beta(zero, beta, zero, z);
  EXPECT_LT(test::relative_error(full, parts), 1e-14);
}

TEST(ReverseStep, ShapeMismatch) {
  EXPECT_THROW(reverse_step_beta(Tensor<double>(1, 2, 2), 0.1, Tensor<double>(1, 2, 3), Tensor<double>(1, 2, 2)),
               ShapeError);
}

TEST(ReverseGrid, FullAndStrided) {
  const auto sched = make_schedule(1000, 1e-4, 0.02);
  const auto full = reverse_grid(sched, 0);
  ASSERT_EQ(full.size(), 1000u);
  EXPECT_EQ(full.front(), 1000);
  EXPECT_EQ(full.back(), 1);
  EXPECT_EQ(reverse_grid(sched, 4), (std::vector<int>{1000, 750, 500, 250}));
  EXPECT_EQ(reverse_grid(sched, 1000), full);
  EXPECT_THROW(reverse_grid(sched, -1), ConfigError);
  EXPECT_THROW(reverse_grid(sched, 1001), ConfigError);
}

TEST(ReverseGrid, JumpBeta) {
  const auto sched = make_schedule(1000, 1e-4, 0.02);
  EXPECT_EQ(jump_beta(sched, 500, 499), sched.beta(500));
  EXPECT_NEAR(jump_beta(sched, 500, 250), 1.0 - sched.alpha_bar(500) / sched.alpha_bar(250), 1e-15);
  EXPECT_NEAR(jump_beta(sched, 250, 0), 1.0 - sched.alpha_bar(250), 1e-15);
}

TEST(Translate, SameSeedSameOutput) {
  const auto sched = make_schedule(20, 1e-4, 0.02);
  const auto net = random_net(true, 1);
  const auto c = source_image();
  SamplerOptions o;
  o.seed = 42;
  const auto a = translate(net, nullptr, c, sched, o).x0, b = translate(net, nullptr, c, sched, o).x0;
  EXPECT_EQ(a, b);
  o.seed = 43;
  EXPECT_NE(translate(net, nullptr, c, sched, o).x0, a);
}

TEST(Translate, ZeroWeightsMatchUnguidedBitForBit) {
  const auto sched = make_schedule(20, 1e-4, 0.02);
  const auto net = random_net(true, 2);
  const auto c = source_image();
  GuidanceConfig<double> g;
  g.lambda_h = g.lambda_f = 0.0;
  SamplerOptions o;
  o.seed = 5;
  EXPECT_EQ(translate(net, g, c, sched, o).x0, translate(net, nullptr, c, sched, o).x0);
}

// With a fresh (zero-output) network the first of two steps moves the state
// by exactly -beta * lambda_f * grad E_f(x_T, c_T), where c_T is rebuilt from
// the documented draw order: x_T, z, then the source noise.
TEST(Translate, GuidedFirstStepOffset) {
  const auto sched = make_schedule(2, 0.01, 0.04);
  const auto net = fresh_net();
  const auto c = source_image();
  GuidanceConfig<double> g;
  g.lambda_h = 0.0;
  g.lambda_f = 0.5;
  SamplerOptions o;
  o.seed = 9;
  o.record_trajectory = true;
  const auto guided = translate(net, g, c, sched, o);
  const auto plain = translate(net, nullptr, c, sched, o);
  ASSERT_EQ(guided.trajectory->size(), 3u);

  Rng rng(9);
  const auto x_T = rng.normal_tensor<double>(1, 8, 8);
  const auto z = rng.normal_tensor<double>(1, 8, 8);
  const auto c_T = forward_perturb(c, 2, rng.normal_like(c), sched);
  const double beta = 0.04;
  Tensor<double> want_plain(x_T.shape());
  for (std::size_t i = 0; i < x_T.size(); ++i) want_plain[i] = (1.0 + 0.5 * beta) * x_T[i] + std::sqrt(beta) * z[i];
  const auto gf = grad_energy_f(g.filter, x_T, c_T);
  const auto& got_plain = (*plain.trajectory)[1].x;
  const auto& got_guided = (*guided.trajectory)[1].x;
  for (std::size_t i = 0; i < x_T.size(); ++i) {
    EXPECT_NEAR(got_plain[i], want_plain[i], 1e-14);
    EXPECT_NEAR(got_guided[i], want_plain[i] - beta * 0.5 * gf[i], 1e-13);
  }
}

TEST(Sampler, FinalStepAddsNoNoise) {
  const auto sched = make_schedule(50, 1e-4, 0.02);
  const auto net = fresh_net();
  SamplerOptions o;
  o.seed = 3;
  o.num_steps = 1;
  const auto out = translate(net, nullptr, source_image(), sched, o).x0;
  Rng rng(3);
  const auto x_T = rng.normal_tensor<double>(1, 8, 8);
  const double beta = 1.0 - sched.alpha_bar(50);
  for (std::size_t i = 0; i < out.size(); ++i)
    EXPECT_DOUBLE_EQ(out[i], std::clamp((1.0 + 0.5 * beta) * x_T[i], -1.0, 1.0));
}

TEST(Sampler, TrajectoryCoversGridDescending) {
  const auto sched = make_schedule(30, 1e-4, 0.02);
  const auto net = random_net(false, 4);
  for (int n : {0, 1, 7, 30}) {
    SamplerOptions o;
    o.num_steps = n;
    o.record_trajectory = true;
    const auto r = sample_unconditional(net, sched, o);
    const auto& tr = *r.trajectory;
    ASSERT_EQ(tr.size(), static_cast<std::size_t>((n == 0 ? 30 : n) + 1));
    EXPECT_EQ(tr.front().t, 30);
    EXPECT_EQ(tr.back().t, 0);
    for (std::size_t i = 1; i < tr.size(); ++i) EXPECT_LT(tr[i].t, tr[i - 1].t);
    EXPECT_EQ(tr.back().x, r.x0);
  }
}

TEST(Sampler, NoTrajectoryUnlessAsked) {
  const auto sched = make_schedule(5, 1e-4, 0.02);
  EXPECT_FALSE(sample_unconditional(random_net(false, 4), sched, {}).trajectory.has_value());
}

// Data ~ N(mu, sd^2) per pixel has the closed-form marginal score
// -(x - sqrt(ab) mu) / (ab sd^2 + 1 - ab); the chain must recover the data law.
TEST(Sampler, RecoversGaussianWithAnalyticScore) {
  const auto sched = make_schedule(1000, 1e-4, 0.02);
  const double mu = 0.3, sd = 0.2;
  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 125; ++seed) {
    SamplerOptions o;
    o.seed = seed;
    const auto r = run_reverse_chain<double>(Shape{1, 4, 4}, sched, o, [&](const Tensor<double>& x, int t, Rng&) {
      const double ab = sched.alpha_bar(t), var = ab * sd * sd + 1.0 - ab;
      Tensor<double> s(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) s[i] = -(x[i] - std::sqrt(ab) * mu) / var;
      return s;
    });
    for (double v : r.x0.values()) sum += v, sq += v * v, ++n;
  }
  ASSERT_EQ(n, 2000);
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_LT(std::abs(mean - mu), 0.05 * sd);
  EXPECT_LT(std::abs(var / (sd * sd) - 1.0), 0.15);
}

TEST(Sampler, GuidedChainsStayFinite) {
  const auto sched = make_schedule(50, 1e-4, 0.02);
  const auto net = random_net(true, 5);
  GuidanceConfig<double> g;
  g.heatmap = std::make_shared<const HeatmapExtractor<double>>(HeatmapExtractor<double>::linear_bank(5));
  const auto c = source_image();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SamplerOptions o;
    o.seed = seed;
    o.num_steps = 10;
    const auto x = translate(net, g, c, sched, o).x0;
    ASSERT_TRUE(all_finite(x)) << "seed " << seed;
    for (double v : x.values()) ASSERT_TRUE(v >= -1.0 && v <= 1.0);
  }
}

TEST(Sampler, Errors) {
  const auto sched = make_schedule(20, 1e-4, 0.02);
  const auto cond = random_net(true, 1), uncond = random_net(false, 1);
  const auto c = source_image();
  SamplerOptions bad;
  bad.num_steps = 21;
  EXPECT_THROW(translate(cond, nullptr, c, sched, bad), ConfigError);
  bad.num_steps = -2;
  EXPECT_THROW(sample_unconditional(uncond, sched, bad), ConfigError);
  EXPECT_THROW(translate(uncond, nullptr, c, sched, {}), ConfigError);
  EXPECT_THROW(sample_unconditional(cond, sched, {}), ConfigError);
  EXPECT_THROW(translate(cond, nullptr, Tensor<double>(1, 16, 16), sched, {}), ShapeError);
  GuidanceConfig<double> no_extractor;  // lambda_h > 0 but no heatmap
  EXPECT_THROW(translate(cond, no_extractor, c, sched, {}), ConfigError);
}

TEST(Sampler, ImageSeedsDiffer) {
  EXPECT_NE(image_seed(1, 0), image_seed(1, 1));
  EXPECT_NE(image_seed(1, 0), image_seed(2, 0));
  EXPECT_EQ(image_seed(7, 3), image_seed(7, 3));
}
