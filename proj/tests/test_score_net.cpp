#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gsde/checkpoint.hpp"
#include "gsde/optimizer.hpp"
#include "gsde/score_net.hpp"
#include "test_util.hpp"

using namespace gsde;

namespace {

ScoreNetConfig small_config(int in_channels = 2) {
  ScoreNetConfig c;
  c.image_size = 8;
  c.in_channels = in_channels;
  c.base_channels = 3;
  c.depth = 2;
  c.time_embed_dim = 4;
  return c;
}

// Every parameter replaced by a normal draw so that no gradient is trivially
// zero (the output layer starts at zero).
template <typename S>
void randomize(ScoreNet<S>& net, std::uint64_t seed, double scale) {
  Rng rng(seed);
  net.params().for_each_scalar([&](std::size_t, std::size_t, S& v) { v = static_cast<S>(scale * rng.normal()); });
}

}  // namespace

TEST(ScoreNet, FreshNetworkOutputsZeros) {
  const auto sched = make_schedule(100, 1e-4, 0.02);
  const auto net = build_network<float>(small_config(), 3);
  const auto x = test::random_tensor<float>(1, 8, 8, 1), c = test::random_tensor<float>(1, 8, 8, 2);
  for (int t : {1, 50, 100})
    for (const auto r = score_forward(net, x, c, t, sched); float v : r.values()) EXPECT_EQ(v, 0.0f);
}

TEST(ScoreNet, SameSeedSameParameters) {
  const auto a = build_network<float>(small_config(), 9), b = build_network<float>(small_config(), 9);
  const auto c = build_network<float>(small_config(), 10);
  EXPECT_TRUE(a.params() == b.params());
  EXPECT_FALSE(a.params() == c.params());
}

// Heap placement must not leak into the vectorized GEMM results.
TEST(ScoreNet, ForwardIsBitReproducibleAcrossAllocations) {
  const auto sched = make_schedule(100, 1e-4, 0.02);
  auto net = build_network<float>(small_config(), 3);
  randomize(net, 4, 0.4);
  const auto x = test::random_tensor<float>(1, 8, 8, 1), c = test::random_tensor<float>(1, 8, 8, 2);
  const auto first = score_forward(net, x, c, 40, sched);
  for (int k = 0; k < 8; ++k) {
    std::vector<char> pad(static_cast<std::size_t>(24 * k + 8));  // shift later allocations
    EXPECT_EQ(score_forward(net, x, c, 40, sched), first);
  }
}

TEST(ScoreNet, InitSchemesAreTagged) {
  const auto net = build_network<float>(small_config(), 1);
  bool zero = false, fan_in = false;
  for (const auto& a : net.params()) {
    zero = zero || a.init == InitScheme::kZero;
    fan_in = fan_in || a.init == InitScheme::kFanInNormal;
  }
  EXPECT_TRUE(zero);
  EXPECT_TRUE(fan_in);
}

TEST(ScoreNet, InternalResolutionsHalveAndDouble) {
  ScoreNetConfig cfg;
  cfg.image_size = 32;
  cfg.depth = 2;
  auto net = build_network<float>(cfg, 1);
  UNetCache<float> cache;
  const auto y = net.unet.forward(test::random_tensor<float>(2, 32, 32, 4), 10, 1000, &cache);
  ASSERT_EQ(cache.skips.size(), 3u);
  EXPECT_EQ(cache.skips[0].height(), 32);
  EXPECT_EQ(cache.skips[1].height(), 16);
  EXPECT_EQ(cache.skips[2].height(), 8);
  // encoder stages, middle, then decoder stages at 16 and 32
  ASSERT_EQ(cache.pre.size(), 6u);
  EXPECT_EQ(cache.pre[3].height(), 8);
  EXPECT_EQ(cache.pre[4].height(), 16);
  EXPECT_EQ(cache.pre[5].height(), 32);
  EXPECT_EQ(y.shape(), (Shape{1, 32, 32}));
}

TEST(ScoreNet, OutputShapeOverRandomConfigs) {
  Rng rng(77);
  const auto sched = make_schedule(20, 1e-4, 0.02);
  for (int trial = 0; trial < 12; ++trial) {
    ScoreNetConfig cfg;
    cfg.depth = static_cast<int>(rng.uniform_int(1, 3));
    cfg.image_size = (1 << cfg.depth) * static_cast<int>(rng.uniform_int(1, 4));
    cfg.base_channels = static_cast<int>(rng.uniform_int(1, 6));
    cfg.time_embed_dim = 2 * static_cast<int>(rng.uniform_int(1, 8));
    cfg.in_channels = static_cast<int>(rng.uniform_int(1, 2));
    auto net = build_network<float>(cfg, trial);
    randomize(net, trial, 0.2);
    const auto x = test::random_tensor<float>(1, cfg.image_size, cfg.image_size, trial);
    const Tensor<float> c = cfg.conditional() ? test::random_tensor<float>(1, cfg.image_size, cfg.image_size, 99)
                                              : Tensor<float>{};
    EXPECT_EQ(score_forward(net, x, c, 7, sched).shape(), x.shape()) << "trial " << trial;
  }
}

TEST(ScoreNet, InvalidConfigsRejected) {
  auto cfg = small_config();
  cfg.image_size = 10;  // not divisible by 4
  EXPECT_THROW(build_network<float>(cfg, 0), ConfigError);
  cfg = small_config();
  cfg.in_channels = 3;
  EXPECT_THROW(build_network<float>(cfg, 0), ConfigError);
  cfg = small_config();
  cfg.base_channels = 0;
  EXPECT_THROW(build_network<float>(cfg, 0), ConfigError);
}

TEST(ScoreNet, ForwardRejectsMismatchedInputs) {
  const auto sched = make_schedule(10, 1e-4, 0.02);
  const auto net = build_network<float>(small_config(), 0);
  const Tensor<float> x(1, 8, 8), bad(1, 4, 4), none;
  EXPECT_THROW(score_forward(net, x, bad, 1, sched), ShapeError);
  EXPECT_THROW(score_forward(net, x, none, 1, sched), ShapeError);
  EXPECT_THROW(score_forward(net, x, x, 0, sched), ConfigError);
  EXPECT_THROW(score_forward(net, x, x, 11, sched), ConfigError);
  const auto uncond = build_network<float>(small_config(1), 0);
  EXPECT_THROW(score_forward(uncond, x, x, 1, sched), ShapeError);
}

TEST(ScoreNet, FiniteOnBoundedInputs) {
  const auto sched = make_schedule(1000, 1e-4, 0.02);
  auto net = build_network<float>(small_config(), 2);
  randomize(net, 5, 0.3);
  Rng rng(6);
  for (int k = 0; k < 20; ++k) {
    Tensor<float> x(1, 8, 8), c(1, 8, 8);
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-5, 5));
    for (auto& v : c.values()) v = static_cast<float>(rng.uniform(-5, 5));
    EXPECT_TRUE(all_finite(score_forward(net, x, c, static_cast<int>(rng.uniform_int(1, 1000)), sched)));
  }
}

TEST(LossAndGrads, ZeroNoiseGivesZeroLossOnFreshNet) {
  const auto sched = make_schedule(100, 1e-4, 0.02);
  const auto net = build_network<double>(small_config(), 1);
  const auto xv = test::random_tensor(1, 8, 8, 1), xn = test::random_tensor(1, 8, 8, 2);
  const Tensor<double> eps(1, 8, 8);
  EXPECT_EQ(loss_and_grads(net, xv, xn, 40, eps, sched).loss, 0.0);
}

TEST(LossAndGrads, FreshNetLossIsScaledNoiseNorm) {
  const auto sched = make_schedule(100, 1e-4, 0.02);
  const auto net = build_network<double>(small_config(), 1);
  const auto xv = test::random_tensor(1, 8, 8, 1), xn = test::random_tensor(1, 8, 8, 2);
  const auto eps = test::random_tensor(1, 8, 8, 3);
  for (int t : {1, 37, 100}) {
    const double want = squared_norm(eps) / (1.0 - sched.alpha_bar(t));
    EXPECT_NEAR(loss_and_grads(net, xv, xn, t, eps, sched).loss, want, 1e-12 * want);
    EXPECT_NEAR(score_loss(net, xv, xn, t, eps, sched), want, 1e-12 * want);
    // the variance weighting removes the 1 / (1 - alpha_bar) factor
    EXPECT_NEAR(loss_and_grads(net, xv, xn, t, eps, sched, LossWeighting::kVariance).loss, squared_norm(eps),
                1e-12 * want);
  }
}

TEST(LossAndGrads, LossIsDistanceToKernelScore) {
  const auto sched = make_schedule(100, 1e-4, 0.02);
  auto net = build_network<double>(small_config(), 1);
  randomize(net, 8, 0.3);
  const auto xv = test::random_tensor(1, 8, 8, 1), xn = test::random_tensor(1, 8, 8, 2);
  const auto eps = test::random_tensor(1, 8, 8, 3);
  const int t = 60;
  const auto s = score_forward(net, forward_perturb(xn, t, eps, sched), xv, t, sched);
  Tensor<double> target = eps;
  target *= -1.0 / sched.noise_std(t);
  const double want = squared_distance(s, target);
  EXPECT_NEAR(loss_and_grads(net, xv, xn, t, eps, sched).loss, want, 1e-10 * want);
}

// Checks every parameter coordinate against central differences.
void check_parameter_gradients(int in_channels, LossWeighting w) {
  const auto sched = make_schedule(100, 1e-4, 0.02);
  auto net = build_network<double>(small_config(in_channels), 1);
  randomize(net, 21, 0.4);
  const auto xv = in_channels == 2 ? test::random_tensor(1, 8, 8, 1) : Tensor<double>{};
  const auto xn = test::random_tensor(1, 8, 8, 2), eps = test::random_tensor(1, 8, 8, 3);
  const int t = 30;
  const auto analytic = loss_and_grads(net, xv, xn, t, eps, sched, w);
  const double h = 1e-3;
  for (std::size_t a = 0; a < net.params().size(); ++a) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < net.params()[a].size(); ++j) {
      double& p = net.params()[a].values[j];
      const double p0 = p;
      p = p0 + h;
      const double fp = score_loss(net, xv, xn, t, eps, sched, w);
      p = p0 - h;
      const double fm = score_loss(net, xv, xn, t, eps, sched, w);
      p = p0;
      const double fd = (fp - fm) / (2 * h), g = analytic.grads[a].values[j];
      num += (fd - g) * (fd - g);
      den += fd * fd;
    }
    EXPECT_LE(std::sqrt(num / std::max(den, 1e-30)), 1e-4) << net.params()[a].name;
  }
}

TEST(LossAndGrads, ParameterGradientsMatchFiniteDifferences) {
  check_parameter_gradients(2, LossWeighting::kUniform);
}

TEST(LossAndGrads, UnconditionalAndVarianceWeightedGradients) {
  check_parameter_gradients(1, LossWeighting::kVariance);
}

TEST(LossAndGrads, ShapeErrors) {
  const auto sched = make_schedule(10, 1e-4, 0.02);
  const auto net = build_network<double>(small_config(), 1);
  const Tensor<double> a(1, 8, 8), b(1, 4, 4);
  EXPECT_THROW(loss_and_grads(net, a, a, 1, b, sched), ShapeError);
  EXPECT_THROW(loss_and_grads(net, b, a, 1, a, sched), ShapeError);
  EXPECT_THROW(loss_and_grads(net, a, a, 0, a, sched), ConfigError);
}

TEST(Optimizer, SgdStep) {
  ParamSet<double> p;
  p.add("w", {1}, InitScheme::kZero);
  p[0].values[0] = 1.0;
  ParamSet<double> g = p.zeros_like();
  g[0].values[0] = 2.0;
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kSgd;
  cfg.learning_rate = 0.1;
  auto st = make_optimizer(cfg, p);
  apply_update(p, g, st);
  EXPECT_DOUBLE_EQ(p[0].values[0], 0.8);
  EXPECT_EQ(st.step, 1);
  const ParamSet<double> before = p;
  apply_update(p, p.zeros_like(), st);
  EXPECT_TRUE(p == before);
}

TEST(Optimizer, AdamFirstStepIsLearningRate) {
  for (double gval : {1e-6, 0.3, 250.0}) {
    ParamSet<double> p;
    p.add("w", {3}, InitScheme::kZero);
    ParamSet<double> g = p.zeros_like();
    for (auto& v : g[0].values) v = gval;
    OptimizerConfig cfg;
    cfg.learning_rate = 1e-3;
    auto st = make_optimizer(cfg, p);
    apply_update(p, g, st);
    for (double v : p[0].values) EXPECT_NEAR(v, -1e-3, 1e-3 * (cfg.eps / gval) + 1e-12);
  }
}

TEST(Optimizer, LayoutMismatchThrows) {
  ParamSet<double> p, q;
  p.add("w", {2}, InitScheme::kZero);
  q.add("w", {3}, InitScheme::kZero);
  auto st = make_optimizer(OptimizerConfig{}, p);
  EXPECT_THROW(apply_update(p, q, st), ShapeError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override { dir = test::scratch_dir("ckpt"); }
  std::string dir;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  const auto sched = make_schedule(50, 1e-4, 0.02);
  auto net = build_network<float>(small_config(), 4);
  randomize(net, 4, 0.2);
  OptimizerConfig oc;
  oc.learning_rate = 1e-3;
  auto opt = make_optimizer(oc, net.params());
  auto g = net.params().zeros_like();
  loss_and_grads_into(net, test::random_tensor<float>(1, 8, 8, 1), test::random_tensor<float>(1, 8, 8, 2), 10,
                      test::random_tensor<float>(1, 8, 8, 3), sched, g);
  apply_update(net.params(), g, opt);
  const std::string path = dir + "/a.nfsd";
  save_checkpoint(net, &opt, path);
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.net.config, net.config);
  EXPECT_TRUE(ck.net.params() == net.params());
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->step, 1);
  EXPECT_TRUE(ck.optimizer->first_moment == opt.first_moment);
  EXPECT_TRUE(ck.optimizer->second_moment == opt.second_moment);
  const auto x = test::random_tensor<float>(1, 8, 8, 7), c = test::random_tensor<float>(1, 8, 8, 8);
  EXPECT_EQ(score_forward(ck.net, x, c, 20, sched), score_forward(net, x, c, 20, sched));
  // save -> load -> save is byte-identical
  save_checkpoint(ck.net, &*ck.optimizer, dir + "/b.nfsd");
  std::ifstream fa(path, std::ios::binary), fb(dir + "/b.nfsd", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(sa.substr(0, 4), "NFSD");
}

TEST_F(CheckpointTest, TruncatedFileIsAnIoError) {
  const auto net = build_network<float>(small_config(), 4);
  const std::string path = dir + "/t.nfsd";
  save_checkpoint(net, nullptr, path);
  const auto full = std::filesystem::file_size(path);
  for (auto keep : {std::uintmax_t{2}, std::uintmax_t{10}, full / 2, full - 1}) {
    std::filesystem::copy_file(path, dir + "/cut.nfsd", std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(dir + "/cut.nfsd", keep);
    EXPECT_THROW(load_checkpoint(dir + "/cut.nfsd"), IoError) << keep;
  }
}

TEST_F(CheckpointTest, MismatchedConfigIsAShapeError) {
  const auto net = build_network<float>(small_config(), 4);
  save_checkpoint(net, nullptr, dir + "/m.nfsd");
  auto other = small_config();
  other.base_channels = 5;
  EXPECT_THROW(load_checkpoint(dir + "/m.nfsd", &other), ShapeError);
}

TEST_F(CheckpointTest, BadMagicAndMissingFile) {
  std::ofstream(dir + "/junk.nfsd") << "JUNKJUNKJUNK";
  EXPECT_THROW(load_checkpoint(dir + "/junk.nfsd"), IoError);
  EXPECT_THROW(load_checkpoint(dir + "/absent.nfsd"), IoError);
}
