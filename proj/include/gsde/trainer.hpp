#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "gsde/checkpoint.hpp"
#include "gsde/optimizer.hpp"
#include "gsde/random.hpp"
#include "gsde/score_net.hpp"
#include "gsde/synth.hpp"

namespace gsde {

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 1e-5;
  long max_steps = 20000;
  long checkpoint_every = 1000;  // 0 disables periodic checkpoints
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeighting weighting = LossWeighting::kVariance;
  std::string checkpoint_path;  // empty: keep nothing on disk

  void validate() const {
    if (batch_size <= 0) throw ConfigError("training: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("training: learning_rate must be positive");
    if (max_steps < 0 || checkpoint_every < 0) throw ConfigError("training: step counts must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
      throw ConfigError("training: invalid adam parameters");
  }
  OptimizerConfig optimizer_config() const { return {optimizer, learning_rate, beta1, beta2, adam_eps}; }
};

// Training images in [-1, 1]. `source` is empty for unconditional training.
template <typename S>
struct TrainingPairs {
  std::vector<Tensor<S>> source;
  std::vector<Tensor<S>> target;

  std::size_t size() const { return target.size(); }
  bool conditional() const { return !source.empty(); }
};

template <typename S = float>
TrainingPairs<S> training_pairs(const std::vector<const PairedSample*>& samples, bool with_source) {
  TrainingPairs<S> out;
  for (const auto* s : samples) {
    if (with_source) out.source.push_back(to_signed_range(s->vis.template cast<S>()));
    out.target.push_back(to_signed_range(s->nir.template cast<S>()));
  }
  return out;
}

struct StepRecord {
  long step = 0;
  std::vector<int> indices;
  std::vector<int> t;
  double loss = 0.0;

  double t_mean() const {
    double s = 0.0;
    for (int v : t) s += v;
    return t.empty() ? 0.0 : s / static_cast<double>(t.size());
  }
};

// Pairs are drawn with replacement; every step has its own seeded stream.
struct TrainLog {
  std::vector<StepRecord> records;

  // Mean loss over records with first <= step <= last.
  double mean_loss(long first, long last) const {
    double s = 0.0;
    long n = 0;
    for (const auto& r : records)
      if (r.step >= first && r.step <= last) s += r.loss, ++n;
    return n ? s / static_cast<double>(n) : 0.0;
  }

  void write_csv(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write training log '" + path + "'");
    os << "step,t_mean,loss\n";
    char line[96];
    for (const auto& r : records) {
      std::snprintf(line, sizeof line, "%ld,%.17g,%.17g\n", r.step, r.t_mean(), r.loss);
      os << line;
    }
    if (!os.flush()) throw IoError("failed writing training log '" + path + "'");
  }
};

template <typename S>
struct Batch {
  std::vector<int> indices;
  std::vector<int> t;
  std::vector<Tensor<S>> eps;
};

// Stream (seed, 1, step); per sample: pair index, then t ~ U{1, T}, then eps.
template <typename S>
Batch<S> draw_batch(const TrainConfig& cfg, std::size_t dataset_size, const NoiseSchedule& sched, long step,
                    const Shape& shape) {
  Rng rng(cfg.seed, {1, static_cast<std::uint64_t>(step)});
  Batch<S> b;
  for (int i = 0; i < cfg.batch_size; ++i) {
    b.indices.push_back(static_cast<int>(rng.uniform_int(0, static_cast<long>(dataset_size) - 1)));
    b.t.push_back(static_cast<int>(rng.uniform_int(1, sched.steps())));
    b.eps.push_back(rng.normal_tensor<S>(shape.channels, shape.height, shape.width));
  }
  return b;
}

template <typename S>
struct TrainState {
  ScoreNet<S> net;
  OptimizerState<S> opt;
  long step = 0;  // completed updates
};

template <typename S>
TrainState<S> init_train_state(const ScoreNetConfig& netcfg, const TrainConfig& cfg) {
  cfg.validate();
  TrainState<S> st{build_network<S>(netcfg, derive_seed(cfg.seed, {0})), {}, 0};
  st.opt = make_optimizer(cfg.optimizer_config(), st.net.params());
  return st;
}

template <typename S>
void check_training_data(const ScoreNet<S>& net, const TrainingPairs<S>& data) {
  if (data.size() == 0) throw ConfigError("trainer: empty dataset");
  if (net.config.conditional() != data.conditional())
    throw ConfigError(net.config.conditional() ? "trainer: conditional network needs source images"
                                               : "trainer: unconditional network given source images");
  if (data.conditional() && data.source.size() != data.target.size())
    throw ShapeError("trainer: source and target counts differ");
  const Shape want{1, net.config.image_size, net.config.image_size};
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!(data.target[i].shape() == want) || (data.conditional() && !(data.source[i].shape() == want)))
      throw ShapeError("trainer: sample " + std::to_string(i) + " does not match network image_size");
}

// Mean per-sample loss of `batch`; parameter gradients of that mean are added
// to `grads` when given.
template <typename S>
double batch_loss(const ScoreNet<S>& net, const TrainingPairs<S>& data, const Batch<S>& batch,
                  const NoiseSchedule& sched, ParamSet<S>* grads, LossWeighting weighting) {
  const Tensor<S> none;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.indices.size(); ++i) {
    const int k = batch.indices[i];
    const Tensor<S>& src = data.conditional() ? data.source[k] : none;
    total += grads ? loss_and_grads_into(net, src, data.target[k], batch.t[i], batch.eps[i], sched, *grads, weighting)
                   : score_loss(net, src, data.target[k], batch.t[i], batch.eps[i], sched, weighting);
  }
  const double n = static_cast<double>(batch.indices.size());
  if (grads) *grads *= static_cast<S>(1.0 / n);
  return total / n;
}

inline nlohmann::json training_header(const NoiseSchedule& sched, const TrainConfig& cfg, long step) {
  return {{"schedule", to_json(sched)}, {"step", step}, {"train_seed", cfg.seed}, {"batch_size", cfg.batch_size},
          {"loss_weighting", to_string(cfg.weighting)}};
}

// Writes to a temporary file first so a crash never leaves a torn checkpoint.
inline void save_training_checkpoint(const TrainState<float>& st, const NoiseSchedule& sched, const TrainConfig& cfg,
                                     const std::string& path) {
  const std::string tmp = path + ".tmp";
  save_checkpoint(st.net, &st.opt, tmp, training_header(sched, cfg, st.step));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

template <typename S>
TrainState<S> resume_state(const ScoreCheckpoint& ck) {
  if (!ck.optimizer) throw IoError("checkpoint holds no optimizer state; cannot resume");
  if (!ck.header.contains("step")) throw IoError("checkpoint holds no training step; cannot resume");
  TrainState<S> st;
  st.net = ck.net.template cast<S>();
  st.opt.config = ck.optimizer->config;
  st.opt.step = ck.optimizer->step;
  st.opt.first_moment = ck.optimizer->first_moment.template cast<S>();
  st.opt.second_moment = ck.optimizer->second_moment.template cast<S>();
  st.step = ck.header["step"].get<long>();
  return st;
}

// Runs updates step+1 .. until. `on_step` (optional) sees every record.
template <typename S>
void train_steps(TrainState<S>& st, const TrainingPairs<S>& data, const TrainConfig& cfg, const NoiseSchedule& sched,
                 long until, TrainLog& log, const std::function<void(const StepRecord&)>& on_step = {}) {
  cfg.validate();
  check_training_data(st.net, data);
  const Shape shape{1, st.net.config.image_size, st.net.config.image_size};
  ParamSet<S> grads = st.net.params().zeros_like();
  while (st.step < until) {
    const long step = st.step + 1;
    const Batch<S> batch = draw_batch<S>(cfg, data.size(), sched, step, shape);
    for (auto& a : grads)
      std::fill(a.values.begin(), a.values.end(), S(0));
    double loss = 0.0;
    try {
      loss = batch_loss(st.net, data, batch, sched, &grads, cfg.weighting);
    } catch (const NumericError& e) {
      throw NumericError(std::string("trainer: ") + e.what() + " (step " + std::to_string(step) + ")", step);
    }
    apply_update(st.net.params(), grads, st.opt);
    st.step = step;
    log.records.push_back({step, batch.indices, batch.t, loss});
    if (on_step) on_step(log.records.back());
    if constexpr (std::is_same_v<S, float>) {
      if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
        save_training_checkpoint(st, sched, cfg, cfg.checkpoint_path);
    }
  }
}

template <typename S>
struct TrainResult {
  ScoreNet<S> net;
  TrainLog log;
  OptimizerState<S> optimizer;
};

template <typename S>
TrainResult<S> train_score_model(const TrainingPairs<S>& data, const TrainConfig& cfg, const NoiseSchedule& sched,
                                 const ScoreNetConfig& netcfg,
                                 const std::function<void(const StepRecord&)>& on_step = {}) {
  if (!netcfg.conditional()) throw ConfigError("train_score_model: network config must have in_channels = 2");
  TrainState<S> st = init_train_state<S>(netcfg, cfg);
  TrainLog log;
  train_steps(st, data, cfg, sched, cfg.max_steps, log, on_step);
  return {std::move(st.net), std::move(log), std::move(st.opt)};
}

template <typename S>
TrainResult<S> train_baseline_unconditional(const TrainingPairs<S>& data, const TrainConfig& cfg,
                                            const NoiseSchedule& sched, const ScoreNetConfig& netcfg,
                                            const std::function<void(const StepRecord&)>& on_step = {}) {
  if (netcfg.conditional()) throw ConfigError("train_baseline_unconditional: network config must have in_channels = 1");
  TrainState<S> st = init_train_state<S>(netcfg, cfg);
  TrainLog log;
  train_steps(st, data, cfg, sched, cfg.max_steps, log, on_step);
  return {std::move(st.net), std::move(log), std::move(st.opt)};
}

}  // namespace gsde
