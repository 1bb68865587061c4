#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "gsde/fer.hpp"
#include "gsde/synth.hpp"
#include "test_util.hpp"

using namespace gsde;
namespace fs = std::filesystem;

namespace {

GenParams small_params() {
  GenParams p;
  p.n_subjects = 10;
  p.samples_per_subject = 10;
  p.extra_subjects = 2;
  p.extra_samples_per_subject = 3;
  return p;
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// Relative path -> bytes for every file below `root`.
std::map<std::string, std::string> tree(const std::string& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  return out;
}

double pearson(const Tensor<double>& a, const Tensor<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Darkness-weighted centroid inside a radius-2 disk around p, with darkness
// measured against the mean of the ring 3 <= d < 4 around p.
std::pair<double, double> dark_centroid(const Tensor<float>& img, const Keypoint& p) {
  const int r0 = static_cast<int>(std::lround(p.row)), c0 = static_cast<int>(std::lround(p.col));
  double ring = 0.0;
  int nring = 0;
  for (int dr = -4; dr <= 4; ++dr)
    for (int dc = -4; dc <= 4; ++dc) {
      const double d = std::hypot(dr, dc);
      if (d >= 3.0 && d < 4.0) ring += img(0, r0 + dr, c0 + dc), ++nring;
    }
  ring /= nring;
  double w = 0.0, sr = 0.0, sc = 0.0;
  for (int dr = -2; dr <= 2; ++dr)
    for (int dc = -2; dc <= 2; ++dc) {
      if (std::hypot(dr, dc) > 2.0) continue;
      const double dark = std::max(0.0, ring - img(0, r0 + dr, c0 + dc));
      w += dark, sr += dark * (r0 + dr), sc += dark * (c0 + dc);
    }
  return {sr / w, sc / w};
}

}  // namespace

TEST(GeneratePair, Deterministic) {
  const GenParams p;
  const auto a = generate_pair(p, 1, 2), b = generate_pair(p, 1, 2);
  EXPECT_EQ(a.vis, b.vis);
  EXPECT_EQ(a.nir, b.nir);
  EXPECT_EQ(a.label, b.label);
  for (int k = 0; k < kNumKeypoints; ++k) EXPECT_EQ(a.keypoints[k], b.keypoints[k]);
  EXPECT_NE(generate_pair(p, 1, 3).vis, a.vis);
}

TEST(GeneratePair, SixDistinctTemplates) {
  for (int a = 0; a < kNumClasses; ++a)
    for (int b = a + 1; b < kNumClasses; ++b) EXPECT_FALSE(expression_template(a) == expression_template(b));
  GenParams p;
  p.expression_jitter = 0.0;
  std::vector<Tensor<float>> imgs;
  for (int label = 0; label < kNumClasses; ++label) imgs.push_back(generate_pair(p, 5, 6, label).vis);
  for (int a = 0; a < kNumClasses; ++a)
    for (int b = a + 1; b < kNumClasses; ++b) EXPECT_NE(imgs[a], imgs[b]);
  EXPECT_THROW(expression_template(6), ConfigError);
}

TEST(GeneratePair, ValuesAndKeypointsInRange) {
  for (int size : {16, 32, 64}) {
    GenParams p;
    p.image_size = size;
    for (std::uint64_t s = 0; s < 30; ++s) {
      const auto x = generate_pair(p, s, 100 + s);
      EXPECT_EQ(x.vis.shape(), (Shape{1, size, size}));
      EXPECT_EQ(x.nir.shape(), x.vis.shape());
      for (float v : x.vis.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
      for (float v : x.nir.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
      for (const auto& k : x.keypoints) {
        EXPECT_TRUE(k.row >= 0 && k.row <= size - 1);
        EXPECT_TRUE(k.col >= 0 && k.col <= size - 1);
      }
      EXPECT_TRUE(x.label >= 0 && x.label < kNumClasses);
    }
  }
}

// Edges agree across modalities more than low frequencies do.
TEST(GeneratePair, HighFrequenciesShareMoreThanLowFrequencies) {
  const GenParams p;
  const Kernel2D blur = gaussian_kernel(2.0);
  double high = 0.0, low = 0.0;
  for (std::uint64_t i = 0; i < 500; ++i) {
    const auto x = generate_pair(p, 1000 + i / 10, 5000 + i);
    const auto v = x.vis.cast<double>(), n = x.nir.cast<double>();
    high += pearson(correlate_reflect(v, laplacian3x3()), correlate_reflect(n, laplacian3x3()));
    low += pearson(correlate_reflect(v, blur), correlate_reflect(n, blur));
  }
  EXPECT_GT(high / 500, low / 500);
}

TEST(GeneratePair, KeypointsSitOnDarkFeatures) {
  GenParams p;
  p.shared_texture = p.vis_texture = p.nir_texture = 0.0;
  double total = 0.0;
  int n = 0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto x = generate_pair(p, 300 + i, 900 + i);
    for (int k : {0, 1, 4}) {  // eyes and mouth centre
      const auto [r, c] = dark_centroid(x.vis, x.keypoints[k]);
      total += std::hypot(r - x.keypoints[k].row, c - x.keypoints[k].col), ++n;
    }
  }
  EXPECT_LT(total / n, 1.5);
}

TEST(GenParams, Validation) {
  GenParams p;
  p.image_size = 8;
  EXPECT_THROW(p.validate(), ConfigError);
  p = GenParams{};
  p.train_fraction = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = GenParams{};
  p.pose_jitter = 2.0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Dataset, SubjectSplit) {
  GenParams p = small_params();
  p.extra_subjects = 0;
  const auto ds = build_dataset(p, 4);
  ASSERT_EQ(ds.samples.size(), 100u);
  std::set<int> train, test;
  for (const auto* s : ds.split("train")) train.insert(s->subject);
  for (const auto* s : ds.split("test")) test.insert(s->subject);
  EXPECT_EQ(train.size(), 8u);
  EXPECT_EQ(test.size(), 2u);
  for (int s : test) EXPECT_EQ(train.count(s), 0u);
  EXPECT_TRUE(ds.split("extra").empty());
}

TEST(Dataset, ExtraPoolHasItsOwnSubjects) {
  const auto ds = build_dataset(small_params(), 4);
  const auto extra = ds.split("extra");
  ASSERT_EQ(extra.size(), 6u);
  for (const auto* s : extra) EXPECT_GE(s->subject, 10);
}

TEST(Dataset, RegenerationIsByteIdentical) {
  const std::string a = test::scratch_dir("gen_a"), b = test::scratch_dir("gen_b");
  generate_dataset(small_params(), 9, a);
  generate_dataset(small_params(), 9, b);
  const auto ta = tree(a);
  EXPECT_EQ(ta.size(), 2 * 106u + 1);
  EXPECT_EQ(ta, tree(b));
}

TEST(Dataset, SaveLoadSaveRoundTrip) {
  const std::string a = test::scratch_dir("rt_a"), b = test::scratch_dir("rt_b");
  const auto ds = generate_dataset(small_params(), 10, a);
  const auto loaded = load_dataset(a + "/manifest.json");
  ASSERT_EQ(loaded.samples.size(), ds.samples.size());
  EXPECT_EQ(loaded.label_histogram(), ds.label_histogram());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto &g = ds.samples[i], &l = loaded.samples[i];
    EXPECT_EQ(l.id, g.id);
    EXPECT_EQ(l.split, g.split);
    EXPECT_EQ(l.subject, g.subject);
    for (int k = 0; k < kNumKeypoints; ++k) EXPECT_EQ(l.keypoints[k], g.keypoints[k]);
    for (std::size_t j = 0; j < g.vis.size(); ++j)
      ASSERT_EQ(l.vis[j], static_cast<float>(quantize_unit(g.vis[j])) / 255.0f);
  }
  save_dataset(loaded, b);
  EXPECT_EQ(tree(a), tree(b));
}

TEST(Dataset, MissingFileIsNamed) {
  const std::string dir = test::scratch_dir("missing");
  const auto ds = generate_dataset(small_params(), 11, dir);
  const std::string victim = "nir/" + ds.samples[5].id + ".pgm";
  fs::remove(fs::path(dir) / victim);
  try {
    load_dataset(dir + "/manifest.json");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(victim), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_dataset(dir + "/nope.json"), IoError);
}

TEST(Dataset, MalformedManifest) {
  const std::string dir = test::scratch_dir("malformed");
  generate_dataset(small_params(), 12, dir);
  std::ofstream(dir + "/manifest.json", std::ios::trunc) << "{\"version\": 1, \"samples\": [";
  EXPECT_THROW(load_dataset(dir + "/manifest.json"), IoError);
}

// A linear probe on clean NIR images must separate the expressions.
TEST(Dataset, ClassesAreLinearlySeparable) {
  const auto ds = build_dataset(GenParams{}, 0);
  std::vector<LabeledImage> train, test;
  for (const auto* s : ds.split("train")) train.push_back({s->nir, s->label, s->subject});
  for (const auto* s : ds.split("test")) test.push_back({s->nir, s->label, s->subject});
  const auto c = train_classifier(train, ClassifierOptions{});
  EXPECT_GE(evaluate_classifier(c, test, "clean").accuracy, 0.8);
}
