#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gsde/checkpoint.hpp"
#include "gsde/config.hpp"
#include "gsde/heatmap_train.hpp"
#include "gsde/pgm.hpp"
#include "gsde/pipeline.hpp"
#include "json.hpp"

namespace gsde {

namespace cli {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string baseline_checkpoint;
  std::string heatmap_checkpoint;
  std::string resume;
  std::string pred;
  std::string synthetic;
  std::string split = "test";
  std::string condition = "Cond+E_h+E_f";
  bool tiny = false;
};

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot write '" + path + "'");
  os << text;
  if (!os.flush()) throw IoError("failed writing '" + path + "'");
}

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError("missing --" + what);
  if (!fs::is_regular_file(path)) throw ConfigError(what + " file '" + path + "' does not exist");
}

// Reduced budget for smoke runs: seconds instead of hours.
inline void apply_tiny(RunConfig& c) {
  c.schedule.T = 50;
  c.network.base_channels = 4;
  c.guidance.heatmap_base_channels = 4;
  c.guidance.heatmap_steps = 20;
  c.guidance.heatmap_batch_size = 4;
  c.training.max_steps = 20;
  c.training.batch_size = 4;
  c.training.learning_rate = 1e-3;
  c.training.checkpoint_every = 0;
  c.data.gen.image_size = 16;
  c.data.gen.n_subjects = 5;
  c.data.gen.samples_per_subject = 6;
  c.data.gen.extra_subjects = 2;
  c.data.gen.extra_samples_per_subject = 6;
  c.eval.max_test_images = 4;
  c.eval.fer_train_subjects = 0;
  c.eval.classifier_iterations = 50;
}

inline RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  if (o.tiny) apply_tiny(c);
  if (o.seed) {
    c.data.seed = *o.seed;
    c.training.seed = *o.seed;
    c.guidance.heatmap_seed = *o.seed;
    c.sampling.seed = *o.seed;
    c.eval.classifier_seed = *o.seed;
  }
  c.validate();
  return c;
}

// The dataset on disk decides the image size.
inline Dataset load_data(const Options& o, RunConfig& cfg) {
  require_file(o.data, "data");
  Dataset ds = load_dataset(o.data);
  cfg.data.gen.image_size = ds.image_size;
  cfg.validate();
  return ds;
}

inline void log_line(const std::string& s) { std::cerr << s << std::endl; }

// Writes the effective config next to the outputs and prints the summary.
inline int finish(const Options& o, const RunConfig& cfg, nlohmann::json summary) {
  write_text(join(o.out, "config.json"), to_json(cfg).dump(2) + "\n");
  write_text(join(o.out, "summary.json"), summary.dump(2) + "\n");
  std::cout << summary.dump() << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_gen_data(const Options& o) {
  RunConfig cfg = resolve_config(o);
  ensure_dir(o.out);
  const Dataset ds = generate_dataset(cfg.data.gen, cfg.data.seed, o.out);
  return finish(o, cfg,
                {{"command", "gen-data"},
                 {"manifest", join(o.out, "manifest.json")},
                 {"samples", ds.samples.size()},
                 {"train", ds.split("train").size()},
                 {"test", ds.split("test").size()},
                 {"extra", ds.split("extra").size()}});
}

inline TrainResult<float> train_network(const Options& o, const RunConfig& cfg, const Dataset& ds, bool conditional,
                                        const std::string& ckpt_path) {
  const NoiseSchedule sched = cfg.make_noise_schedule();
  TrainConfig tc = cfg.train_config();
  tc.checkpoint_path = ckpt_path;
  const ScoreNetConfig netcfg = cfg.score_net_config(conditional);
  const auto data = training_pairs<float>(ds.split("train"), conditional);
  const char* tag = conditional ? "train-score" : "train-baseline";
  TrainState<float> st;
  if (!o.resume.empty()) {
    require_file(o.resume, "resume");
    st = resume_state<float>(load_checkpoint(o.resume, &netcfg));
  } else {
    st = init_train_state<float>(netcfg, tc);
  }
  TrainLog log;
  const long every = tc.checkpoint_every > 0 ? tc.checkpoint_every : 1000;
  double window = 0.0;
  train_steps(st, data, tc, sched, tc.max_steps, log, [&](const StepRecord& r) {
    window += r.loss;
    if (r.step % every == 0) {
      log_line(std::string(tag) + ": step " + std::to_string(r.step) + " mean loss " +
               std::to_string(window / static_cast<double>(every)));
      window = 0.0;
    }
  });
  save_training_checkpoint(st, sched, tc, ckpt_path);
  return {std::move(st.net), std::move(log), std::move(st.opt)};
}

inline int cmd_train(const Options& o, bool conditional) {
  RunConfig cfg = resolve_config(o);
  const Dataset ds = load_data(o, cfg);
  ensure_dir(o.out);
  const std::string name = conditional ? "score.nfsd" : "baseline.nfsd";
  const TrainResult<float> r = train_network(o, cfg, ds, conditional, join(o.out, name));
  r.log.write_csv(join(o.out, conditional ? "train_log.csv" : "baseline_log.csv"));
  const long n = r.log.records.empty() ? 0 : r.log.records.back().step;
  const long first = r.log.records.empty() ? 0 : r.log.records.front().step;
  return finish(o, cfg,
                {{"command", conditional ? "train-score" : "train-baseline"},
                 {"checkpoint", join(o.out, name)},
                 {"steps", n},
                 {"loss_first_100", r.log.mean_loss(first, first + 99)},
                 {"loss_last_100", r.log.mean_loss(n - 99, n)}});
}

inline HeatmapTrainResult train_heatmap(const RunConfig& cfg, const Dataset& ds) {
  const NoiseSchedule sched = cfg.make_noise_schedule();
  const long every = std::max<long>(1, cfg.guidance.heatmap_steps / 10);
  return train_heatmap_extractor(ds.split("train"), sched, cfg.heatmap_options(), [&](long step, double loss) {
    if (step % every == 0) log_line("train-heatmap: step " + std::to_string(step) + " loss " + std::to_string(loss));
  });
}

inline int cmd_train_heatmap(const Options& o) {
  RunConfig cfg = resolve_config(o);
  const Dataset ds = load_data(o, cfg);
  ensure_dir(o.out);
  const HeatmapTrainResult r = train_heatmap(cfg, ds);
  save_heatmap(r.extractor, join(o.out, "heatmap.nfsd"));
  std::string csv = "step,loss\n";
  char line[64];
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.17g\n", i + 1, r.losses[i]);
    csv += line;
  }
  write_text(join(o.out, "heatmap_log.csv"), csv);
  const NoiseSchedule sched = cfg.make_noise_schedule();
  const auto test = ds.split("test");
  nlohmann::json s = {{"command", "train-heatmap"},
                      {"checkpoint", join(o.out, "heatmap.nfsd")},
                      {"initial_loss", r.initial_loss()},
                      {"final_loss", r.final_loss()}};
  if (!test.empty()) {
    s["test_error_clean_px"] = localization_error(r.extractor, test, sched, 0, cfg.guidance.heatmap_seed);
    s["test_error_half_noise_px"] =
        localization_error(r.extractor, test, sched, sched.step_for_alpha_bar(0.5), cfg.guidance.heatmap_seed);
  }
  return finish(o, cfg, s);
}

inline std::shared_ptr<const HeatmapExtractor<float>> heatmap_for(const Options& o, const RunConfig& cfg,
                                                                  const NoiseSchedule& sched) {
  if (heatmap_kind_from_string(cfg.guidance.heatmap) == HeatmapKind::kLinearBank)
    return std::make_shared<const HeatmapExtractor<float>>(
        HeatmapExtractor<float>::linear_bank(kNumKeypoints, cfg.guidance.heat_sigma));
  require_file(o.heatmap_checkpoint, "heatmap");
  auto h = load_heatmap(o.heatmap_checkpoint);
  if (h.kind() == HeatmapKind::kTrainedNet && h.steps() != sched.steps())
    throw ConfigError("heatmap checkpoint '" + o.heatmap_checkpoint + "' was trained with T=" +
                      std::to_string(h.steps()) + ", config has T=" + std::to_string(sched.steps()));
  return std::make_shared<const HeatmapExtractor<float>>(std::move(h));
}

inline int cmd_translate(const Options& o) {
  RunConfig cfg = resolve_config(o);
  const Dataset ds = load_data(o, cfg);
  const NoiseSchedule sched = cfg.make_noise_schedule();
  const Condition& cond = condition_by_name(o.condition);
  require_file(o.checkpoint, "checkpoint");
  Models models;
  const ScoreNetConfig want = cfg.score_net_config(cond.conditional);
  (cond.conditional ? models.conditional : models.baseline) = load_checkpoint(o.checkpoint, &want).net;
  if (cond.use_heatmap && cfg.guidance.lambda_h > 0.0) models.heatmap = heatmap_for(o, cfg, sched);
  const auto src = ds.split(o.split);
  if (src.empty()) throw ConfigError("dataset has no samples in split '" + o.split + "'");
  ensure_dir(o.out);

  const GuidanceConfig<float> guidance = guidance_for(cond, cfg, models.heatmap);
  nlohmann::json index = nlohmann::json::array();
  std::vector<Tensor<float>> out(src.size());
  std::vector<Trajectory<float>> paths(src.size());
  parallel_for(src.size(), cfg.sampling.threads, [&](std::size_t i) {
    SamplerOptions so;
    so.num_steps = cfg.sampling.num_steps;
    so.seed = image_seed(cfg.sampling.seed, i);
    so.record_trajectory = cfg.sampling.record_trajectory;
    SampleResult<float> r = cond.conditional
                                ? translate(models.conditional, &guidance, to_signed_range(src[i]->vis), sched, so)
                                : sample_unconditional(models.baseline, sched, so);
    out[i] = to_unit_range(r.x0);
    if (r.trajectory) paths[i] = std::move(*r.trajectory);
  });
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::string file = src[i]->id + ".pgm";
    write_pgm(join(o.out, file), out[i]);
    if (cfg.sampling.record_trajectory) {
      const std::string dir = join(join(o.out, "trajectories"), src[i]->id);
      ensure_dir(dir);
      char name[32];
      for (std::size_t k = 0; k < paths[i].size(); ++k) {
        std::snprintf(name, sizeof name, "%04zu_t%04d.pgm", k, paths[i][k].t);
        write_pgm(join(dir, name), to_unit_range(clamp(paths[i][k].x, -1.0f, 1.0f)));
      }
    }
    index.push_back({{"id", src[i]->id}, {"path", file}, {"label", src[i]->label}, {"subject", src[i]->subject}});
  }
  write_text(join(o.out, "translations.json"),
             nlohmann::json({{"condition", cond.name}, {"split", o.split}, {"images", index}}).dump(1) + "\n");
  return finish(o, cfg,
                {{"command", "translate"}, {"condition", cond.name}, {"split", o.split}, {"images", src.size()}});
}

struct TranslatedSet {
  std::vector<std::string> ids;
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  std::vector<int> subjects;
};

inline TranslatedSet read_translations(const std::string& dir) {
  const std::string index_path = join(dir, "translations.json");
  std::ifstream is(index_path);
  if (!is) throw ConfigError("translation index '" + index_path + "' does not exist");
  TranslatedSet out;
  try {
    const nlohmann::json j = nlohmann::json::parse(is);
    for (const auto& e : j.at("images")) {
      out.ids.push_back(e.at("id").get<std::string>());
      out.images.push_back(read_pgm(join(dir, e.at("path").get<std::string>())));
      out.labels.push_back(e.at("label").get<int>());
      out.subjects.push_back(e.at("subject").get<int>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed translation index '" + index_path + "': " + e.what());
  }
  return out;
}

inline int cmd_eval_quality(const Options& o) {
  RunConfig cfg = resolve_config(o);
  const Dataset ds = load_data(o, cfg);
  if (o.pred.empty()) throw ConfigError("missing --pred");
  const TranslatedSet pred = read_translations(o.pred);
  std::vector<Tensor<float>> refs;
  for (const auto& id : pred.ids) {
    const PairedSample* hit = nullptr;
    for (const auto& s : ds.samples)
      if (s.id == id) hit = &s;
    if (!hit) throw ConfigError("translated image '" + id + "' has no pair in the dataset");
    refs.push_back(hit->nir);
  }
  const QualityReport q = evaluate_quality(pred.images, refs);
  ensure_dir(o.out);
  std::string csv = "id,psnr,ssim\n";
  char line[128];
  for (std::size_t i = 0; i < pred.ids.size(); ++i) {
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f\n", pred.ids[i].c_str(), q.psnr[i], q.ssim[i]);
    csv += line;
  }
  write_text(join(o.out, "quality.csv"), csv);
  return finish(o, cfg,
                {{"command", "eval-quality"},
                 {"images", pred.ids.size()},
                 {"psnr_mean", q.psnr_mean},
                 {"psnr_std", q.psnr_std},
                 {"ssim_mean", q.ssim_mean},
                 {"ssim_std", q.ssim_std}});
}

inline nlohmann::json fer_json(const FERReport& r) {
  return {{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"per_class_f1", r.per_class_f1},
          {"confusion", r.confusion}};
}

inline int cmd_eval_fer(const Options& o) {
  RunConfig cfg = resolve_config(o);
  const Dataset ds = load_data(o, cfg);
  std::vector<LabeledImage> extra;
  if (!o.synthetic.empty()) {
    const TranslatedSet syn = read_translations(o.synthetic);
    for (std::size_t i = 0; i < syn.images.size(); ++i) extra.push_back({syn.images[i], syn.labels[i], syn.subjects[i]});
  }
  const FERComparison cmp = evaluate_fer_protocol(labeled_nir(fer_train_subset(ds, cfg.eval.fer_train_subjects)), extra,
                                                  labeled_nir(ds.split("test")), cfg.classifier_options());
  ensure_dir(o.out);
  std::string csv = "condition,accuracy,macro_f1\n";
  char line[128];
  for (const FERReport* r : {&cmp.without_translation, &cmp.with_translation}) {
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f\n", r->condition.c_str(), r->accuracy, r->macro_f1);
    csv += line;
  }
  write_text(join(o.out, "fer.csv"), csv);
  return finish(o, cfg,
                {{"command", "eval-fer"},
                 {"synthetic_images", extra.size()},
                 {"without_translation", fer_json(cmp.without_translation)},
                 {"with_translation", fer_json(cmp.with_translation)},
                 {"accuracy_gain", cmp.accuracy_gain()}});
}

inline int cmd_ablate(const Options& o) {
  RunConfig cfg = resolve_config(o);
  ensure_dir(o.out);
  Options local = o;
  if (local.data.empty()) {
    const std::string dir = join(o.out, "data");
    generate_dataset(cfg.data.gen, cfg.data.seed, dir);
    local.data = join(dir, "manifest.json");
  }
  const Dataset ds = load_data(local, cfg);
  const NoiseSchedule sched = cfg.make_noise_schedule();

  Models models;
  if (!o.checkpoint.empty()) {
    const ScoreNetConfig want = cfg.score_net_config(true);
    require_file(o.checkpoint, "checkpoint");
    models.conditional = load_checkpoint(o.checkpoint, &want).net;
  } else {
    log_line("ablate: training conditional score net");
    local.resume.clear();
    models.conditional = train_network(local, cfg, ds, true, join(o.out, "score.nfsd")).net;
  }
  if (!o.baseline_checkpoint.empty()) {
    const ScoreNetConfig want = cfg.score_net_config(false);
    require_file(o.baseline_checkpoint, "baseline");
    models.baseline = load_checkpoint(o.baseline_checkpoint, &want).net;
  } else {
    log_line("ablate: training unconditional baseline");
    models.baseline = train_network(local, cfg, ds, false, join(o.out, "baseline.nfsd")).net;
  }
  if (heatmap_kind_from_string(cfg.guidance.heatmap) == HeatmapKind::kTrainedNet && o.heatmap_checkpoint.empty()) {
    log_line("ablate: training heatmap extractor");
    HeatmapTrainResult h = train_heatmap(cfg, ds);
    save_heatmap(h.extractor, join(o.out, "heatmap.nfsd"));
    models.heatmap = std::make_shared<const HeatmapExtractor<float>>(std::move(h.extractor));
  } else {
    models.heatmap = heatmap_for(local, cfg, sched);
  }

  const AblationResult r =
      run_ablation(cfg, ds, models, sched, [](const std::string& c) { log_line("ablate: condition " + c); });
  write_ablation_csv(r, join(o.out, "ablation.csv"));
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"condition", row.condition},
                    {"psnr_mean", row.quality.psnr_mean},
                    {"ssim_mean", row.quality.ssim_mean},
                    {"fer_accuracy", row.fer.with_translation.accuracy},
                    {"fer_accuracy_gain", row.fer.accuracy_gain()}});
  return finish(o, cfg,
                {{"command", "ablate"},
                 {"csv", join(o.out, "ablation.csv")},
                 {"test_images", r.test_images},
                 {"extra_images", r.extra_images},
                 {"fer_accuracy_without_translation", r.accuracy_without_translation},
                 {"conditions", rows}});
}

}  // namespace cli

// Exit codes: 0 success, 1 configuration or input error, 2 runtime or
// numerical failure.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Energy-guided score-based VIS to NIR translation on synthetic paired faces."};
  app.require_subcommand(1);
  app.footer(config_help());
  app.set_version_flag("--version", "1.0.0");
  cli::Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run config (defaults apply to missing keys)");
    sub->add_option("--seed", o.seed, "overrides every seed in the config");
    sub->add_option("--out", o.out, "output directory")->required();
  };
  auto with_data = [&](CLI::App* sub) { sub->add_option("--data", o.data, "dataset manifest.json")->required(); };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic paired dataset");
  common(gen);
  auto* train_score = app.add_subcommand("train-score", "train the conditional score network");
  auto* train_base = app.add_subcommand("train-baseline", "train the unconditional baseline network");
  for (auto* sub : {train_score, train_base}) {
    common(sub);
    with_data(sub);
    sub->add_option("--resume", o.resume, "training checkpoint to continue from");
  }
  auto* train_heat = app.add_subcommand("train-heatmap", "train the time-dependent keypoint heatmap network");
  common(train_heat);
  with_data(train_heat);
  auto* tr = app.add_subcommand("translate", "translate a split with a trained network");
  common(tr);
  with_data(tr);
  tr->add_option("--checkpoint", o.checkpoint, "score network checkpoint")->required();
  tr->add_option("--heatmap", o.heatmap_checkpoint, "heatmap extractor checkpoint");
  tr->add_option("--split", o.split, "dataset split to translate")->capture_default_str();
  tr->add_option("--condition", o.condition, "Baseline | Cond | Cond+E_h | Cond+E_f | Cond+E_h+E_f")
      ->capture_default_str();
  auto* eq = app.add_subcommand("eval-quality", "PSNR and SSIM of translated images against the true NIR");
  common(eq);
  with_data(eq);
  eq->add_option("--pred", o.pred, "directory written by translate")->required();
  auto* ef = app.add_subcommand("eval-fer", "expression classifier with and without translated extra data");
  common(ef);
  with_data(ef);
  ef->add_option("--synthetic", o.synthetic, "directory written by translate --split extra");
  auto* ab = app.add_subcommand("ablate", "train everything and compare the five conditions");
  common(ab);
  ab->add_option("--data", o.data, "dataset manifest.json (generated under --out when omitted)");
  ab->add_option("--checkpoint", o.checkpoint, "reuse a conditional score checkpoint");
  ab->add_option("--baseline", o.baseline_checkpoint, "reuse a baseline checkpoint");
  ab->add_option("--heatmap", o.heatmap_checkpoint, "reuse a heatmap checkpoint");
  ab->add_flag("--tiny", o.tiny, "reduced budget smoke run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cli::cmd_gen_data(o);
    if (train_score->parsed()) return cli::cmd_train(o, true);
    if (train_base->parsed()) return cli::cmd_train(o, false);
    if (train_heat->parsed()) return cli::cmd_train_heatmap(o);
    if (tr->parsed()) return cli::cmd_translate(o);
    if (eq->parsed()) return cli::cmd_eval_quality(o);
    if (ef->parsed()) return cli::cmd_eval_fer(o);
    if (ab->parsed()) return cli::cmd_ablate(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}

}  // namespace gsde
