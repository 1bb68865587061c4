#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "gsde/filters.hpp"
#include "gsde/pgm.hpp"
#include "gsde/random.hpp"
#include "json.hpp"

namespace gsde {

inline constexpr int kNumKeypoints = 5;  // left eye, right eye, left mouth corner, right mouth corner, mouth center
inline constexpr int kNumClasses = 6;

inline const char* expression_name(int label) {
  static const char* names[kNumClasses] = {"happy", "sad", "surprise", "angry", "disgust", "fear"};
  if (label < 0 || label >= kNumClasses) throw ConfigError("expression label " + std::to_string(label) + " out of range");
  return names[label];
}

struct Keypoint {
  double row = 0.0;
  double col = 0.0;
  bool operator==(const Keypoint&) const = default;
};

using Keypoints = std::array<Keypoint, kNumKeypoints>;

// Mouth curvature (corners up when positive), mouth opening, brow tilt (inner
// ends up when positive), brow raise, and mouth width factor. Lengths are in
// pixels at 32x32.
struct ExpressionParams {
  double curvature = 0.0;
  double openness = 0.0;
  double brow_tilt = 0.0;
  double brow_raise = 0.0;
  double mouth_width = 1.0;
  bool operator==(const ExpressionParams&) const = default;
};

inline ExpressionParams expression_template(int label) {
  static const ExpressionParams t[kNumClasses] = {
      {2.2, 0.6, 0.0, 0.0, 1.15},    // happy
      {-1.8, 0.0, 0.8, 0.3, 0.95},   // sad
      {0.0, 3.0, 0.0, 1.8, 0.75},    // surprise
      {-0.6, 0.0, -1.0, -1.0, 0.9},  // angry
      {-1.2, 1.0, -0.5, -0.5, 1.0},  // disgust
      {-0.4, 1.8, 0.9, 1.2, 1.05},   // fear
  };
  expression_name(label);
  return t[label];
}

struct GenParams {
  int image_size = 32;
  int n_subjects = 50;
  int samples_per_subject = 20;
  int extra_subjects = 20;  // VIS-only augmentation pool
  int extra_samples_per_subject = 6;
  double train_fraction = 0.8;

  double subject_jitter = 0.25;    // head-centre offset per subject, px
  double pose_jitter = 0.25;       // head-centre offset per sample, px
  double expression_jitter = 1.0;  // scale of per-sample expression noise

  double shared_texture = 0.02;  // fine texture present in both modalities
  double vis_texture = 0.015;    // band texture, VIS only
  double nir_texture = 0.015;    // band texture, NIR only
  double vis_vignette = 0.05;
  double nir_vignette = 0.15;
  double nir_lowpass_sigma = 2.0;  // px at 32x32
  double nir_inversion = 0.8;      // gain of the inverted low-pass component

  void validate() const {
    if (image_size < 16) throw ConfigError("data: image_size must be at least 16");
    if (n_subjects < 1 || samples_per_subject < 1 || extra_subjects < 0 || extra_samples_per_subject < 0)
      throw ConfigError("data: subject and sample counts must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("data: train_fraction must lie in (0, 1)");
    if (subject_jitter < 0 || subject_jitter > 1.0 || pose_jitter < 0 || pose_jitter > 1.0 || expression_jitter < 0)
      throw ConfigError("data: jitter ranges must lie in [0, 1] px");
    if (shared_texture < 0 || vis_texture < 0 || nir_texture < 0 || vis_vignette < 0 || nir_vignette < 0 ||
        !(nir_lowpass_sigma > 0))
      throw ConfigError("data: texture, vignette and low-pass parameters must be non-negative");
  }
};

struct PairedSample {
  std::string id;
  Tensor<float> vis;  // [0, 1]
  Tensor<float> nir;  // [0, 1]
  Keypoints keypoints{};
  int label = 0;
  int subject = 0;
  std::string split;
};

struct SubjectParams {
  double cx, cy;        // head centre
  double ax, ay;        // head semi-axes
  double eye_dx, eye_dy, eye_r;
  double mouth_dy, mouth_w;
  double skin, background, light;
  double nir_level;
};

inline SubjectParams draw_subject(const GenParams& p, Rng& rng) {
  const double s = p.image_size / 32.0, c = p.image_size / 2.0;
  SubjectParams sp{};
  sp.cx = c + s * rng.uniform(-p.subject_jitter, p.subject_jitter);
  sp.cy = c + s * rng.uniform(-p.subject_jitter, p.subject_jitter);
  sp.ax = s * rng.uniform(10.0, 12.0);
  sp.ay = s * rng.uniform(12.0, 13.5);
  sp.eye_dx = s * rng.uniform(5.0, 6.5);
  sp.eye_dy = s * rng.uniform(3.5, 4.5);
  sp.eye_r = s * rng.uniform(1.2, 1.6);
  sp.mouth_dy = s * rng.uniform(5.5, 7.0);
  sp.mouth_w = s * rng.uniform(3.5, 4.5);
  sp.skin = rng.uniform(0.55, 0.75);
  sp.background = rng.uniform(0.1, 0.25);
  sp.light = rng.uniform(-0.25, 0.25);
  sp.nir_level = rng.uniform(0.75, 0.9);
  return sp;
}

namespace detail {

inline double segment_distance(double py, double px, double ay, double ax, double by, double bx) {
  const double dy = by - ay, dx = bx - ax;
  const double u = std::clamp(((py - ay) * dy + (px - ax) * dx) / (dy * dy + dx * dx), 0.0, 1.0);
  return std::hypot(py - ay - u * dy, px - ax - u * dx);
}

// Gaussian-filtered white noise rescaled to standard deviation `amplitude`.
inline Tensor<double> band_texture(int n, double sigma, double amplitude, Rng& rng) {
  Tensor<double> w = rng.normal_tensor<double>(1, n, n);
  if (amplitude == 0.0) return Tensor<double>(1, n, n);
  Tensor<double> b = correlate_reflect(w, gaussian_kernel(sigma));
  double mean = 0.0, var = 0.0;
  for (double v : b.values()) mean += v;
  mean /= static_cast<double>(b.size());
  for (double v : b.values()) var += (v - mean) * (v - mean);
  const double scale = amplitude / std::sqrt(var / static_cast<double>(b.size()));
  for (double& v : b.values()) v = (v - mean) * scale;
  return b;
}

}  // namespace detail

// Renders one VIS/NIR pair. Sample-stream draw order: head offset (2),
// expression noise (5), then the shared, VIS and NIR textures.
inline PairedSample render_pair(const GenParams& p, const SubjectParams& sp, int label, Rng& rng) {
  const int n = p.image_size;
  const double s = n / 32.0;
  const double cx = sp.cx + s * rng.uniform(-p.pose_jitter, p.pose_jitter);
  const double cy = sp.cy + s * rng.uniform(-p.pose_jitter, p.pose_jitter);
  ExpressionParams e = expression_template(label);
  const double amp[5] = {0.3, 0.3, 0.2, 0.2, 0.05};
  double noise[5];
  for (int i = 0; i < 5; ++i) noise[i] = p.expression_jitter * amp[i] * rng.uniform(-1.0, 1.0);
  e.curvature += noise[0];
  e.openness = std::max(0.0, e.openness + noise[1]);
  e.brow_tilt += noise[2];
  e.brow_raise += noise[3];
  e.mouth_width += noise[4];

  const double eye_row = cy - sp.eye_dy;
  const double eye_col[2] = {cx - sp.eye_dx, cx + sp.eye_dx};
  const double mouth_row = cy + sp.mouth_dy, half_w = sp.mouth_w * e.mouth_width;
  const double curv = s * e.curvature, open = s * e.openness;

  constexpr int kSuper = 4;
  Tensor<double> head(1, n, n), feat(1, n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      int in_head = 0, in_eye = 0, in_brow = 0, in_mouth = 0;
      for (int i = 0; i < kSuper; ++i)
        for (int j = 0; j < kSuper; ++j) {
          const double y = r + (i + 0.5) / kSuper - 0.5, x = c + (j + 0.5) / kSuper - 0.5;
          const double hx = (x - cx) / sp.ax, hy = (y - cy) / sp.ay;
          in_head += hx * hx + hy * hy <= 1.0;
          bool eye = false, brow = false;
          for (int side = 0; side < 2; ++side) {
            eye |= std::hypot(y - eye_row, x - eye_col[side]) <= sp.eye_r;
            const double dir = side == 0 ? 1.0 : -1.0;  // toward the face midline
            const double by = eye_row - s * (2.6 + 0.5 * e.brow_raise);
            const double inner_y = by - s * 0.5 * e.brow_tilt, outer_y = by + s * 0.5 * e.brow_tilt;
            brow |= detail::segment_distance(y, x, inner_y, eye_col[side] + dir * 1.8 * s, outer_y,
                                             eye_col[side] - dir * 1.8 * s) <= 0.55 * s;
          }
          in_eye += eye;
          in_brow += brow;
          const double u = (x - cx) / half_w;
          if (std::abs(u) <= 1.0) {
            const double centre = mouth_row - curv * u * u;
            in_mouth += std::abs(y - centre) <= 0.5 * open * (1.0 - u * u) + 0.5 * s;
          }
        }
      const double k = 1.0 / (kSuper * kSuper);
      head(0, r, c) = k * in_head;
      feat(0, r, c) = -(0.45 * k * in_eye + 0.3 * k * in_brow + 0.4 * k * in_mouth);
    }

  const Tensor<double> shared = detail::band_texture(n, 0.7 * s, p.shared_texture, rng);
  const Tensor<double> vis_band = detail::band_texture(n, 2.0 * s, p.vis_texture, rng);
  const Tensor<double> nir_band = detail::band_texture(n, 2.0 * s, p.nir_texture, rng);

  // Geometry + shading shared by both modalities, before textures.
  Tensor<double> base(1, n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double ramp = std::clamp((c - cx) / sp.ax, -1.0, 1.0);
      const double m = head(0, r, c);
      base(0, r, c) = sp.background * (1.0 - m) + m * (sp.skin + sp.light * ramp) + feat(0, r, c);
    }
  // NIR keeps the high-pass part of the base and inverts its low-pass part.
  const Tensor<double> low = correlate_reflect(base, gaussian_kernel(p.nir_lowpass_sigma * s));

  PairedSample out;
  out.label = label;
  out.vis = Tensor<float>(1, n, n);
  out.nir = Tensor<float>(1, n, n);
  const double mid = (n - 1) / 2.0, rad2 = (n / 2.0) * (n / 2.0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double v2 = ((r - mid) * (r - mid) + (c - mid) * (c - mid)) / rad2;
      const double b = base(0, r, c), lo = low(0, r, c), tex = shared(0, r, c);
      const double vis = b + tex + vis_band(0, r, c) - p.vis_vignette * v2;
      const double nir = sp.nir_level - p.nir_inversion * lo + (b - lo) + tex + nir_band(0, r, c) - p.nir_vignette * v2;
      out.vis(0, r, c) = static_cast<float>(std::clamp(vis, 0.0, 1.0));
      out.nir(0, r, c) = static_cast<float>(std::clamp(nir, 0.0, 1.0));
    }
  out.keypoints = {Keypoint{eye_row, eye_col[0]}, Keypoint{eye_row, eye_col[1]},
                   Keypoint{mouth_row - curv, cx - half_w}, Keypoint{mouth_row - curv, cx + half_w},
                   Keypoint{mouth_row, cx}};
  return out;
}

inline PairedSample generate_pair(const GenParams& p, std::uint64_t subject_seed, std::uint64_t sample_seed, int label) {
  p.validate();
  Rng subject_rng(subject_seed), sample_rng(sample_seed);
  const SubjectParams sp = draw_subject(p, subject_rng);
  return render_pair(p, sp, label, sample_rng);
}

// Label drawn uniformly from the sample stream before any other draw.
inline PairedSample generate_pair(const GenParams& p, std::uint64_t subject_seed, std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  const int label = static_cast<int>(rng.uniform_int(0, kNumClasses - 1));
  p.validate();
  Rng subject_rng(subject_seed);
  const SubjectParams sp = draw_subject(p, subject_rng);
  return render_pair(p, sp, label, rng);
}

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  int image_size = 0;
  std::vector<PairedSample> samples;

  std::vector<const PairedSample*> split(const std::string& name) const {
    std::vector<const PairedSample*> out;
    for (const auto& s : samples)
      if (s.split == name) out.push_back(&s);
    return out;
  }
  std::map<int, int> label_histogram() const {
    std::map<int, int> h;
    for (const auto& s : samples) ++h[s.label];
    return h;
  }
};

// Subjects 0..n_subjects-1 are shuffled and the first round(train_fraction n)
// go to "train", the rest to "test". Subjects after those form the "extra"
// split. Labels cycle through the classes within each subject.
inline Dataset build_dataset(const GenParams& p, std::uint64_t master_seed) {
  p.validate();
  std::vector<int> order(static_cast<std::size_t>(p.n_subjects));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(master_seed, {2});
  std::shuffle(order.begin(), order.end(), split_rng.engine());
  const int n_train = std::clamp(static_cast<int>(std::lround(p.train_fraction * p.n_subjects)), 1,
                                 std::max(1, p.n_subjects - 1));
  std::vector<std::string> split(static_cast<std::size_t>(p.n_subjects + p.extra_subjects), "extra");
  for (int i = 0; i < p.n_subjects; ++i) split[order[i]] = i < n_train ? "train" : "test";
  if (p.n_subjects == 1) split[0] = "train";

  Dataset ds;
  ds.image_size = p.image_size;
  for (int subj = 0; subj < p.n_subjects + p.extra_subjects; ++subj) {
    Rng subject_rng(master_seed, {0, static_cast<std::uint64_t>(subj)});
    const SubjectParams sp = draw_subject(p, subject_rng);
    const int count = subj < p.n_subjects ? p.samples_per_subject : p.extra_samples_per_subject;
    for (int j = 0; j < count; ++j) {
      Rng rng(master_seed, {1, static_cast<std::uint64_t>(subj), static_cast<std::uint64_t>(j)});
      PairedSample s = render_pair(p, sp, j % kNumClasses, rng);
      char id[32];
      std::snprintf(id, sizeof id, "s%03d_%02d", subj, j);
      s.id = id;
      s.subject = subj;
      s.split = split[subj];
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// Writes vis/<id>.pgm, nir/<id>.pgm and manifest.json under `out_dir`.
inline void save_dataset(const Dataset& ds, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "vis", ec);
  fs::create_directories(fs::path(out_dir) / "nir", ec);
  if (ec) throw IoError("cannot create dataset directory '" + out_dir + "': " + ec.message());
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    const std::string vis = "vis/" + s.id + ".pgm", nir = "nir/" + s.id + ".pgm";
    write_pgm((fs::path(out_dir) / vis).string(), s.vis);
    write_pgm((fs::path(out_dir) / nir).string(), s.nir);
    nlohmann::json kp = nlohmann::json::array();
    for (const auto& k : s.keypoints) kp.push_back({k.row, k.col});
    samples.push_back({{"id", s.id}, {"vis_path", vis}, {"nir_path", nir}, {"keypoints", kp},
                       {"label", s.label}, {"subject", s.subject}, {"split", s.split}});
  }
  const nlohmann::json manifest = {{"version", 1}, {"image_size", ds.image_size}, {"samples", samples}};
  const std::string path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest '" + path + "'");
  os << manifest.dump(1) << '\n';
  if (!os.flush()) throw IoError("failed writing manifest '" + path + "'");
}

inline Dataset generate_dataset(const GenParams& p, std::uint64_t master_seed, const std::string& out_dir) {
  Dataset ds = build_dataset(p, master_seed);
  save_dataset(ds, out_dir);
  return ds;
}

inline Dataset load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest '" + manifest_path + "'");
  const fs::path root = fs::path(manifest_path).parent_path();
  Dataset ds;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("version").get<int>() != 1) throw IoError("manifest '" + manifest_path + "' has unsupported version");
    ds.image_size = j.at("image_size").get<int>();
    for (const auto& e : j.at("samples")) {
      PairedSample s;
      s.id = e.value("id", std::string{});
      s.vis = read_pgm((root / e.at("vis_path").get<std::string>()).string());
      s.nir = read_pgm((root / e.at("nir_path").get<std::string>()).string());
      const auto& kp = e.at("keypoints");
      if (kp.size() != kNumKeypoints) throw IoError("manifest '" + manifest_path + "': wrong keypoint count");
      for (int k = 0; k < kNumKeypoints; ++k) s.keypoints[k] = {kp[k].at(0).get<double>(), kp[k].at(1).get<double>()};
      s.label = e.at("label").get<int>();
      s.subject = e.at("subject").get<int>();
      s.split = e.at("split").get<std::string>();
      if (s.label < 0 || s.label >= kNumClasses) throw IoError("manifest '" + manifest_path + "': invalid label");
      if (s.vis.height() != ds.image_size || s.vis.width() != ds.image_size || !(s.nir.shape() == s.vis.shape()))
        throw IoError("manifest '" + manifest_path + "': image " + s.id + " does not match image_size");
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest '" + manifest_path + "': " + e.what());
  }
  return ds;
}

}  // namespace gsde
