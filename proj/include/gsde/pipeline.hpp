#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "gsde/config.hpp"
#include "gsde/fer.hpp"
#include "gsde/metrics.hpp"
#include "gsde/sampler.hpp"

namespace gsde {

// The five ablation conditions, weakest first.
struct Condition {
  const char* name;
  bool conditional;
  bool use_heatmap;
  bool use_highpass;
};

inline constexpr std::array<Condition, 5> kConditions{{
    {"Baseline", false, false, false},
    {"Cond", true, false, false},
    {"Cond+E_h", true, true, false},
    {"Cond+E_f", true, false, true},
    {"Cond+E_h+E_f", true, true, true},
}};

inline const Condition& condition_by_name(const std::string& name) {
  for (const auto& c : kConditions)
    if (name == c.name) return c;
  throw ConfigError("unknown condition '" + name + "' (expected Baseline, Cond, Cond+E_h, Cond+E_f or Cond+E_h+E_f)");
}

struct Models {
  ScoreNet<float> conditional;
  ScoreNet<float> baseline;
  std::shared_ptr<const HeatmapExtractor<float>> heatmap;
};

// Runs body(i) for i in [0, n) on `threads` workers. Each index writes only its
// own output slot, so results do not depend on the thread count.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(threads)) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline GuidanceConfig<float> guidance_for(const Condition& cond, const RunConfig& cfg,
                                          std::shared_ptr<const HeatmapExtractor<float>> heatmap) {
  GuidanceConfig<float> g;
  g.lambda_h = cond.use_heatmap ? cfg.guidance.lambda_h : 0.0;
  g.lambda_f = cond.use_highpass ? cfg.guidance.lambda_f : 0.0;
  g.filter = cfg.highpass_filter();
  if (g.lambda_h > 0.0) {
    if (!heatmap) throw ConfigError(std::string(cond.name) + ": lambda_h > 0 needs a heatmap extractor");
    g.heatmap = std::move(heatmap);
  }
  return g;
}

// Translates every source (VIS, [0, 1]) under one condition. Image i uses the
// stream image_seed(master, i) whatever the condition, so conditions are
// compared on common noise. Outputs are in [0, 1].
inline std::vector<Tensor<float>> translate_all(const Condition& cond, const Models& models, const RunConfig& cfg,
                                                const NoiseSchedule& sched, const std::vector<const PairedSample*>& src,
                                                std::uint64_t master) {
  const GuidanceConfig<float> guidance = guidance_for(cond, cfg, models.heatmap);
  std::vector<Tensor<float>> out(src.size());
  parallel_for(src.size(), cfg.sampling.threads, [&](std::size_t i) {
    SamplerOptions so;
    so.num_steps = cfg.sampling.num_steps;
    so.seed = image_seed(master, i);
    Tensor<float> x;
    try {
      x = cond.conditional ? translate(models.conditional, &guidance, to_signed_range(src[i]->vis), sched, so).x0
                           : sample_unconditional(models.baseline, sched, so).x0;
    } catch (const NumericError& e) {
      throw NumericError(std::string("sampler (") + cond.name + ", image " + src[i]->id + "): " + e.what(), e.step());
    }
    out[i] = to_unit_range(x);
  });
  return out;
}

// First `max_images` test pairs (all when 0).
inline std::vector<const PairedSample*> test_subset(const Dataset& ds, int max_images) {
  auto test = ds.split("test");
  if (test.empty()) throw ConfigError("dataset has no test split");
  if (max_images > 0 && static_cast<std::size_t>(max_images) < test.size()) test.resize(static_cast<std::size_t>(max_images));
  return test;
}

// Train pairs of the `n_subjects` lowest-numbered train subjects (all when 0).
// A small real set leaves room for augmentation to matter.
inline std::vector<const PairedSample*> fer_train_subset(const Dataset& ds, int n_subjects) {
  const auto train = ds.split("train");
  std::set<int> subjects;
  for (const auto* s : train) subjects.insert(s->subject);
  if (n_subjects > 0 && static_cast<std::size_t>(n_subjects) < subjects.size())
    subjects.erase(std::next(subjects.begin(), n_subjects), subjects.end());
  std::vector<const PairedSample*> out;
  for (const auto* s : train)
    if (subjects.count(s->subject)) out.push_back(s);
  return out;
}

inline std::vector<LabeledImage> labeled_nir(const std::vector<const PairedSample*>& samples) {
  std::vector<LabeledImage> out;
  for (const auto* s : samples) out.push_back({s->nir, s->label, s->subject});
  return out;
}

inline std::vector<LabeledImage> labeled(const std::vector<Tensor<float>>& images,
                                         const std::vector<const PairedSample*>& samples) {
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back({images[i], samples[i]->label, samples[i]->subject});
  return out;
}

struct ConditionResult {
  std::string condition;
  QualityReport quality;
  FERComparison fer;
};

struct AblationResult {
  std::vector<ConditionResult> rows;
  double accuracy_without_translation = 0.0;
  std::size_t test_images = 0;
  std::size_t extra_images = 0;
};

// Seeds of the two translated pools, derived from sampling.seed.
inline std::uint64_t test_pool_seed(const RunConfig& cfg) { return derive_seed(cfg.sampling.seed, {0}); }
inline std::uint64_t extra_pool_seed(const RunConfig& cfg) { return derive_seed(cfg.sampling.seed, {1}); }

// For every condition: translate the test split and score it against the true
// NIR; translate the extra pool and use it to augment the FER probe.
inline AblationResult run_ablation(const RunConfig& cfg, const Dataset& ds, const Models& models,
                                   const NoiseSchedule& sched,
                                   const std::function<void(const std::string&)>& progress = {}) {
  const auto test = test_subset(ds, cfg.eval.max_test_images);
  const auto extra = ds.split("extra");
  const auto fer_train = labeled_nir(fer_train_subset(ds, cfg.eval.fer_train_subjects));
  const auto fer_test = labeled_nir(ds.split("test"));
  std::vector<Tensor<float>> refs;
  for (const auto* s : test) refs.push_back(s->nir);
  const ClassifierOptions copts = cfg.classifier_options();

  AblationResult out;
  out.test_images = test.size();
  out.extra_images = extra.size();
  for (const auto& cond : kConditions) {
    if (progress) progress(cond.name);
    ConditionResult r;
    r.condition = cond.name;
    r.quality = evaluate_quality(translate_all(cond, models, cfg, sched, test, test_pool_seed(cfg)), refs);
    const auto synthetic = translate_all(cond, models, cfg, sched, extra, extra_pool_seed(cfg));
    r.fer = evaluate_fer_protocol(fer_train, labeled(synthetic, extra), fer_test, copts);
    out.accuracy_without_translation = r.fer.without_translation.accuracy;
    out.rows.push_back(std::move(r));
  }
  return out;
}

inline void write_ablation_csv(const AblationResult& r, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << "condition,psnr_mean,psnr_std,ssim_mean,ssim_std,fer_accuracy,fer_macro_f1,fer_accuracy_gain\n";
  char line[256];
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.condition.c_str(),
                  row.quality.psnr_mean, row.quality.psnr_std, row.quality.ssim_mean, row.quality.ssim_std,
                  row.fer.with_translation.accuracy, row.fer.with_translation.macro_f1, row.fer.accuracy_gain());
    os << line;
  }
  if (!os.flush()) throw IoError("failed writing '" + path + "'");
}

}  // namespace gsde
