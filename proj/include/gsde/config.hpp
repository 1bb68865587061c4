#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "gsde/fer.hpp"
#include "gsde/guidance.hpp"
#include "gsde/heatmap_train.hpp"
#include "gsde/schedule.hpp"
#include "gsde/synth.hpp"
#include "gsde/trainer.hpp"
#include "json.hpp"

namespace gsde {

struct ScheduleSection {
  int T = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

struct NetworkSection {
  int base_channels = 16;
  int depth = 2;
  int time_embed_dim = 32;
};

struct GuidanceSection {
  double lambda_h = 100.0;
  double lambda_f = 0.5;
  std::string filter = "laplacian3x3";
  double blur_sigma = 2.0;
  std::string heatmap = "trained_net";
  double heat_sigma = 1.5;
  int heatmap_base_channels = 8;
  long heatmap_steps = 6000;
  int heatmap_batch_size = 16;
  double heatmap_learning_rate = 1e-3;
  std::uint64_t heatmap_seed = 0;
};

struct TrainingSection {
  int batch_size = 16;
  double learning_rate = 1e-5;
  long max_steps = 20000;
  long checkpoint_every = 1000;
  std::uint64_t seed = 0;
  std::string optimizer = "adam";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string loss_weighting = "variance";
};

struct SamplingSection {
  int num_steps = 0;
  std::uint64_t seed = 0;
  bool record_trajectory = false;
  int threads = 1;
};

struct DataSection {
  GenParams gen;
  std::uint64_t seed = 0;
};

struct EvalSection {
  int max_test_images = 0;     // 0 = the whole test split
  int fer_train_subjects = 4;  // real NIR training subjects for the FER probe, 0 = all
  int classifier_iterations = 1000;
  double classifier_learning_rate = 2.0;
  double classifier_l2 = 1e-4;
  std::uint64_t classifier_seed = 0;
};

// Every field is optional; the defaults are the reference configuration.
struct RunConfig {
  ScheduleSection schedule;
  NetworkSection network;
  GuidanceSection guidance;
  TrainingSection training;
  SamplingSection sampling;
  DataSection data;
  EvalSection eval;

  NoiseSchedule make_noise_schedule() const { return make_schedule(schedule.T, schedule.beta_min, schedule.beta_max); }

  ScoreNetConfig score_net_config(bool conditional) const {
    ScoreNetConfig c;
    c.image_size = data.gen.image_size;
    c.in_channels = conditional ? 2 : 1;
    c.base_channels = network.base_channels;
    c.depth = network.depth;
    c.time_embed_dim = network.time_embed_dim;
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.batch_size = training.batch_size;
    c.learning_rate = training.learning_rate;
    c.max_steps = training.max_steps;
    c.checkpoint_every = training.checkpoint_every;
    c.seed = training.seed;
    c.optimizer = optimizer_kind_from_string(training.optimizer);
    c.beta1 = training.beta1;
    c.beta2 = training.beta2;
    c.adam_eps = training.adam_eps;
    c.weighting = loss_weighting_from_string(training.loss_weighting);
    return c;
  }

  HeatmapTrainOptions heatmap_options() const {
    HeatmapTrainOptions o;
    o.base_channels = guidance.heatmap_base_channels;
    o.depth = network.depth;
    o.time_embed_dim = network.time_embed_dim;
    o.heat_sigma = guidance.heat_sigma;
    o.steps = guidance.heatmap_steps;
    o.batch_size = guidance.heatmap_batch_size;
    o.learning_rate = guidance.heatmap_learning_rate;
    o.seed = guidance.heatmap_seed;
    return o;
  }

  HighPassFilter highpass_filter() const { return {filter_kind_from_string(guidance.filter), guidance.blur_sigma}; }

  ClassifierOptions classifier_options() const {
    ClassifierOptions o;
    o.n_classes = kNumClasses;
    o.iterations = eval.classifier_iterations;
    o.learning_rate = eval.classifier_learning_rate;
    o.l2 = eval.classifier_l2;
    o.seed = eval.classifier_seed;
    return o;
  }

  void validate() const;
};

namespace detail {

using FieldRef = std::variant<int*, long*, double*, bool*, std::string*, std::uint64_t*>;

struct Field {
  std::string section;
  std::string key;
  FieldRef ref;
  std::string help;
};

inline std::vector<Field> config_fields(RunConfig& c) {
  auto& g = c.data.gen;
  return {
      {"schedule", "T", &c.schedule.T, "number of diffusion steps"},
      {"schedule", "beta_min", &c.schedule.beta_min, "beta at t = 1 (linear schedule)"},
      {"schedule", "beta_max", &c.schedule.beta_max, "beta at t = T"},
      {"network", "base_channels", &c.network.base_channels, "score net channels at full resolution"},
      {"network", "depth", &c.network.depth, "down/upsampling stages; image_size must divide by 2^depth"},
      {"network", "time_embed_dim", &c.network.time_embed_dim, "sinusoidal time embedding width (even)"},
      {"guidance", "lambda_h", &c.guidance.lambda_h, "weight of the landmark-heatmap energy"},
      {"guidance", "lambda_f", &c.guidance.lambda_f, "weight of the high-pass energy"},
      {"guidance", "filter", &c.guidance.filter, "high-pass filter: laplacian3x3 | identity_minus_gaussian"},
      {"guidance", "blur_sigma", &c.guidance.blur_sigma, "Gaussian sigma at 32x32 for identity_minus_gaussian"},
      {"guidance", "heatmap", &c.guidance.heatmap, "heatmap extractor: trained_net | linear_bank"},
      {"guidance", "heat_sigma", &c.guidance.heat_sigma, "radius of the target keypoint blobs, px"},
      {"guidance", "heatmap_base_channels", &c.guidance.heatmap_base_channels, "heatmap net channels"},
      {"guidance", "heatmap_steps", &c.guidance.heatmap_steps, "heatmap net training steps"},
      {"guidance", "heatmap_batch_size", &c.guidance.heatmap_batch_size, "heatmap net batch size"},
      {"guidance", "heatmap_learning_rate", &c.guidance.heatmap_learning_rate, "heatmap net Adam learning rate"},
      {"guidance", "heatmap_seed", &c.guidance.heatmap_seed, "heatmap net init and batch seed"},
      {"training", "batch_size", &c.training.batch_size, "pairs per step, drawn with replacement"},
      {"training", "learning_rate", &c.training.learning_rate, "optimizer step size"},
      {"training", "max_steps", &c.training.max_steps, "fixed update budget"},
      {"training", "checkpoint_every", &c.training.checkpoint_every, "steps between checkpoints, 0 = end only"},
      {"training", "seed", &c.training.seed, "network init and batch seed"},
      {"training", "optimizer", &c.training.optimizer, "adam | sgd"},
      {"training", "beta1", &c.training.beta1, "Adam first-moment decay"},
      {"training", "beta2", &c.training.beta2, "Adam second-moment decay"},
      {"training", "adam_eps", &c.training.adam_eps, "Adam denominator epsilon"},
      {"training", "loss_weighting", &c.training.loss_weighting,
       "variance (noise-prediction error) | uniform (plain score error)"},
      {"sampling", "num_steps", &c.sampling.num_steps, "reverse steps, 0 = T"},
      {"sampling", "seed", &c.sampling.seed, "master seed; image i uses hash(seed, i)"},
      {"sampling", "record_trajectory", &c.sampling.record_trajectory, "also write every intermediate state"},
      {"sampling", "threads", &c.sampling.threads, "images translated in parallel"},
      {"data", "seed", &c.data.seed, "dataset master seed"},
      {"data", "image_size", &g.image_size, "pixels per side"},
      {"data", "n_subjects", &g.n_subjects, "subjects split 80/20 into train/test"},
      {"data", "samples_per_subject", &g.samples_per_subject, "paired samples per train/test subject"},
      {"data", "extra_subjects", &g.extra_subjects, "subjects in the augmentation pool"},
      {"data", "extra_samples_per_subject", &g.extra_samples_per_subject, "samples per augmentation subject"},
      {"data", "train_fraction", &g.train_fraction, "share of subjects in the train split"},
      {"data", "subject_jitter", &g.subject_jitter, "per-subject head offset, px"},
      {"data", "pose_jitter", &g.pose_jitter, "per-sample head offset, px"},
      {"data", "expression_jitter", &g.expression_jitter, "scale of per-sample expression noise"},
      {"data", "shared_texture", &g.shared_texture, "fine texture amplitude in both modalities"},
      {"data", "vis_texture", &g.vis_texture, "VIS-only band texture amplitude"},
      {"data", "nir_texture", &g.nir_texture, "NIR-only band texture amplitude"},
      {"data", "vis_vignette", &g.vis_vignette, "VIS vignette strength"},
      {"data", "nir_vignette", &g.nir_vignette, "NIR vignette strength"},
      {"data", "nir_lowpass_sigma", &g.nir_lowpass_sigma, "low-pass sigma of the NIR transform, px at 32x32"},
      {"data", "nir_inversion", &g.nir_inversion, "gain of the inverted low-pass shading in NIR"},
      {"eval", "max_test_images", &c.eval.max_test_images, "test pairs to translate, 0 = all"},
      {"eval", "fer_train_subjects", &c.eval.fer_train_subjects, "real NIR train subjects for the FER probe, 0 = all"},
      {"eval", "classifier_iterations", &c.eval.classifier_iterations, "full-batch gradient steps"},
      {"eval", "classifier_learning_rate", &c.eval.classifier_learning_rate, "classifier step size"},
      {"eval", "classifier_l2", &c.eval.classifier_l2, "weight decay"},
      {"eval", "classifier_seed", &c.eval.classifier_seed, "classifier init seed"},
  };
}

inline void read_field(const Field& f, const nlohmann::json& v) {
  const std::string name = f.section + "." + f.key;
  auto bad = [&](const char* want) { return ConfigError("config key '" + name + "' must be " + want); };
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (!v.is_boolean()) throw bad("a boolean");
          *p = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (!v.is_string()) throw bad("a string");
          *p = v.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
          if (!v.is_number()) throw bad("a number");
          *p = v.get<double>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (!v.is_number_unsigned()) throw bad("a non-negative integer");
          *p = v.get<std::uint64_t>();
        } else {
          if (!v.is_number_integer()) throw bad("an integer");
          *p = v.get<T>();
        }
      },
      f.ref);
}

inline nlohmann::json field_value(const Field& f) {
  return std::visit([](auto* p) { return nlohmann::json(*p); }, f.ref);
}

}  // namespace detail

inline void RunConfig::validate() const {
  if (schedule.T < 2) throw ConfigError("schedule.T must be at least 2");
  if (!(schedule.beta_min > 0.0 && schedule.beta_min < schedule.beta_max && schedule.beta_max < 1.0))
    throw ConfigError("schedule: need 0 < beta_min < beta_max < 1");
  score_net_config(true).unet().validate();
  if (guidance.lambda_h < 0.0 || guidance.lambda_f < 0.0) throw ConfigError("guidance weights must be non-negative");
  filter_kind_from_string(guidance.filter);
  heatmap_kind_from_string(guidance.heatmap);
  if (!(guidance.blur_sigma > 0.0) || !(guidance.heat_sigma > 0.0))
    throw ConfigError("guidance: blur_sigma and heat_sigma must be positive");
  if (guidance.heatmap_base_channels <= 0 || guidance.heatmap_steps < 0 || guidance.heatmap_batch_size <= 0 ||
      !(guidance.heatmap_learning_rate > 0.0))
    throw ConfigError("guidance: invalid heatmap training settings");
  train_config().validate();
  if (sampling.num_steps < 0 || sampling.num_steps > schedule.T)
    throw ConfigError("sampling.num_steps must lie in [0, schedule.T]");
  if (sampling.threads < 1) throw ConfigError("sampling.threads must be at least 1");
  data.gen.validate();
  if (eval.max_test_images < 0 || eval.fer_train_subjects < 0 || eval.classifier_iterations < 0 ||
      !(eval.classifier_learning_rate > 0.0) || eval.classifier_l2 < 0.0)
    throw ConfigError("eval: invalid classifier or subset settings");
}

// Overlays `j` on the defaults. Unknown sections or keys and wrong value types
// are errors so that a typo never silently falls back to a default.
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto fields = detail::config_fields(c);
  for (const auto& [section, body] : j.items()) {
    bool known = false;
    for (const auto& f : fields) known = known || f.section == section;
    if (!known) throw ConfigError("unknown config section '" + section + "'");
    if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      const detail::Field* hit = nullptr;
      for (const auto& f : fields)
        if (f.section == section && f.key == key) hit = &f;
      if (!hit) throw ConfigError("unknown config key '" + section + "." + key + "'");
      detail::read_field(*hit, value);
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// Full effective configuration, every key present.
inline nlohmann::json to_json(const RunConfig& cfg) {
  RunConfig c = cfg;
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : detail::config_fields(c)) j[f.section][f.key] = detail::field_value(f);
  return j;
}

// One line per key: name, default, description.
inline std::string config_help() {
  RunConfig c;
  std::ostringstream os;
  os << "Config keys (JSON sections; every key optional):\n";
  for (const auto& f : detail::config_fields(c)) {
    std::string name = "  " + f.section + "." + f.key;
    std::string def = detail::field_value(f).dump();
    name.resize(std::max<std::size_t>(name.size() + 1, 36), ' ');
    def.resize(std::max<std::size_t>(def.size() + 1, 14), ' ');
    os << name << def << f.help << '\n';
  }
  return os.str();
}

}  // namespace gsde
