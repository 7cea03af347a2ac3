#include "solodiff/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "solodiff/checkpoint.hpp"
#include "solodiff/config.hpp"
#include "solodiff/error.hpp"
#include "solodiff/evaluation.hpp"
#include "solodiff/generation.hpp"
#include "solodiff/image_io.hpp"
#include "solodiff/nnf.hpp"
#include "solodiff/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace solodiff {

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required --") + flag);
}

/// Everything a subcommand needs, plus the manifest it fills in.
struct Run {
  std::string command;
  ExperimentConfig cfg;
  std::ostream& log;
  json manifest;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  fs::path out_dir() const { return fs::path(cfg.output); }

  void finish() {
    manifest["command"] = command;
    manifest["version"] = kVersionTag;
    manifest["config"] = config_to_json(cfg);
    manifest["started_at"] = started_at;
    manifest["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json_atomic((out_dir() / "run_manifest.json").string(), manifest);
  }

  std::string started_at = utc_timestamp();
};

ProgressFn progress_logger(std::ostream& log, int every, const std::string& role) {
  if (every <= 0) return {};
  return [&log, every, role](const LossRecord& r) {
    if ((r.iteration + 1) % every == 0) {
      log << "[train " << role << "] iter " << (r.iteration + 1) << " loss " << fmt(r.loss)
          << " lr " << fmt(r.lr);
      if (r.k != 0) log << " k " << r.k;
      log << '\n';
    }
  };
}

void write_loss_csv(const std::vector<LossRecord>& trace, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "iteration,loss,lr,k\n";
  for (const LossRecord& r : trace) {
    out << r.iteration << ',' << fmt(r.loss) << ',' << fmt(r.lr) << ',' << r.k << '\n';
  }
}

double tail_mean_loss(const std::vector<LossRecord>& trace) {
  if (trace.empty()) return 0.0;
  const std::size_t n = std::max<std::size_t>(1, trace.size() / 10);
  double s = 0.0;
  for (std::size_t i = trace.size() - n; i < trace.size(); ++i) s += trace[i].loss;
  return s / static_cast<double>(n);
}

VideoClip load_input(const Run& run) {
  require(run.cfg.input, "input");
  return load_video_frames(run.cfg.input, run.cfg.max_side);
}

void write_provenance(const fs::path& dir, const std::vector<FrameOrigin>& origins,
                      const json& extra) {
  json p = extra;
  json frames = json::array();
  for (std::size_t i = 0; i < origins.size(); ++i) {
    frames.push_back({{"file", frame_filename(static_cast<int>(i) + 1)}, {"origin", to_string(origins[i])}});
  }
  p["frames"] = frames;
  write_json_atomic((dir / "provenance.json").string(), p);
}

// ---------------------------------------------------------------- commands

void cmd_train(Run& run) {
  const ExperimentConfig& c = run.cfg;
  require(c.output, "output");
  const ModelRole role = config_role(c);
  const VideoClip clip = load_input(run);
  RandomSource rng(c.seed);
  TrainResult res = train_model(clip, train_task_for(c, role), schedule_for(c, role),
                                denoiser_config(c), rng, progress_logger(run.log, c.log_every, c.role));
  CheckpointInfo info;
  info.source_shape = clip.frame_shape();
  info.config = config_to_json(c);
  save_checkpoint(res.model, c.output, info);
  write_loss_csv(res.trace, run.out_dir() / "loss.csv");
  run.manifest["iterations"] = res.model.iterations;
  run.manifest["checkpoints"] = {c.output};
  run.manifest["outputs"] = {(run.out_dir() / "loss.csv").string()};
  run.manifest["metrics"] = {{"final_loss", tail_mean_loss(res.trace)},
                             {"parameter_count", res.model.net.parameter_count()}};
}

Shape output_shape(const ExperimentConfig& c, const CheckpointInfo& info, int channels) {
  Shape s{channels, c.out_height > 0 ? c.out_height : info.source_shape.height,
          c.out_width > 0 ? c.out_width : info.source_shape.width};
  if (s.height <= 0 || s.width <= 0) {
    throw ConfigError("output size unknown: pass --out-height and --out-width");
  }
  return s;
}

void cmd_generate_image(Run& run) {
  const ExperimentConfig& c = run.cfg;
  require(c.model, "model");
  require(c.output, "output");
  const LoadedCheckpoint ck = load_checkpoint_any(c.model, {ModelRole::image, ModelRole::projector});
  const Shape shape = output_shape(c, ck.info, ck.model.net.config().out_channels);
  RandomSource rng(c.seed);
  std::vector<Tensor> images;
  for (int i = 0; i < c.samples; ++i) {
    images.push_back(generate_image(ck.model, shape, rng, sampler_options(c)));
  }
  save_video_frames(images, c.output);
  write_provenance(run.out_dir(),
                   std::vector<FrameOrigin>(images.size(), FrameOrigin::projector_sampled),
                   {{"model", c.model}, {"seed", c.seed}});
  run.manifest["checkpoints"] = {c.model};
  run.manifest["outputs"] = {{"frames", images.size()}, {"shape", shape.str()}};
}

struct VideoModels {
  LoadedCheckpoint predictor;
  std::optional<LoadedCheckpoint> projector;
};

VideoModels load_video_models(const ExperimentConfig& c, bool need_projector) {
  require(c.predictor, "predictor");
  VideoModels m{load_checkpoint(c.predictor, ModelRole::predictor), std::nullopt};
  if (need_projector) {
    require(c.projector, "projector");
    m.projector = load_checkpoint_any(c.projector, {ModelRole::projector, ModelRole::image});
  }
  return m;
}

int effective_t_corr(const ExperimentConfig& c) { return c.no_projector ? 0 : c.t_corr; }

void cmd_generate_video(Run& run) {
  const ExperimentConfig& c = run.cfg;
  require(c.output, "output");
  if (c.frames < 1) throw ConfigError("generate-video needs --frames >= 1");
  const int t_corr = effective_t_corr(c);
  const bool seeded = c.seed_frame > 0;
  VideoModels models = load_video_models(c, t_corr > 0 || !seeded);

  VideoGenSpec spec;
  spec.length = c.frames;
  spec.t_corr = t_corr;
  spec.direction = direction_from_string(c.direction);
  if (seeded) {
    const VideoClip clip = load_input(run);
    if (c.seed_frame > static_cast<int>(clip.size())) {
      throw ConfigError("seed_frame " + std::to_string(c.seed_frame) + " exceeds the " +
                        std::to_string(clip.size()) + "-frame input");
    }
    spec.seed_frame = clip[static_cast<std::size_t>(c.seed_frame - 1)];
  } else {
    spec.shape = output_shape(c, models.projector->info,
                              models.predictor.model.net.config().out_channels);
  }
  RandomSource rng(c.seed);
  const Model* proj = models.projector ? &models.projector->model : nullptr;
  const GeneratedVideo video = generate_video(models.predictor.model, proj, spec, rng,
                                              sampler_options(c));
  save_video_frames(video.frames, c.output);
  write_provenance(run.out_dir(), video.provenance,
                   {{"predictor", c.predictor}, {"projector", c.projector}, {"t_corr", t_corr},
                    {"direction", c.direction}, {"seed", c.seed}});
  run.manifest["checkpoints"] = proj ? json{c.predictor, c.projector} : json{c.predictor};
  run.manifest["outputs"] = {{"frames", video.frames.size()}};
}

void cmd_extrapolate(Run& run) {
  const ExperimentConfig& c = run.cfg;
  require(c.output, "output");
  const int t_corr = effective_t_corr(c);
  VideoModels models = load_video_models(c, t_corr > 0);
  const VideoClip clip = load_input(run);
  RandomSource rng(c.seed);
  const Model* proj = models.projector ? &models.projector->model : nullptr;
  const GeneratedVideo video = extrapolate(clip, models.predictor.model, proj,
                                           direction_from_string(c.direction), c.frames, rng,
                                           t_corr, sampler_options(c));
  if (video.frames.empty()) throw ConfigError("extrapolate needs --frames >= 1");
  save_video_frames(video.frames, c.output);
  write_provenance(run.out_dir(), video.provenance,
                   {{"predictor", c.predictor}, {"projector", c.projector}, {"t_corr", t_corr},
                    {"direction", c.direction}, {"input", c.input}, {"seed", c.seed}});
  run.manifest["checkpoints"] = proj ? json{c.predictor, c.projector} : json{c.predictor};
  run.manifest["outputs"] = {{"frames", video.frames.size()}};
}

void cmd_upsample(Run& run) {
  const ExperimentConfig& c = run.cfg;
  require(c.output, "output");
  require(c.interpolator, "interpolator");
  const int t_corr = effective_t_corr(c);
  const LoadedCheckpoint interp = load_checkpoint(c.interpolator, ModelRole::interpolator);
  std::optional<LoadedCheckpoint> proj;
  if (t_corr > 0) {
    require(c.projector, "projector");
    proj = load_checkpoint_any(c.projector, {ModelRole::projector, ModelRole::image});
  }
  const VideoClip clip = load_input(run);
  RandomSource rng(c.seed);
  const VideoClip up = upsample_temporal(clip, interp.model, proj ? &proj->model : nullptr, rng,
                                         t_corr, sampler_options(c));
  save_video_frames(up, c.output);
  std::vector<FrameOrigin> origins;
  for (std::size_t i = 0; i < up.size(); ++i) {
    origins.push_back(i % 2 == 0 ? FrameOrigin::seeded
                                 : (t_corr > 0 ? FrameOrigin::predicted_corrected
                                               : FrameOrigin::predicted));
  }
  write_provenance(run.out_dir(), origins,
                   {{"interpolator", c.interpolator}, {"projector", c.projector},
                    {"t_corr", t_corr}, {"input", c.input}, {"seed", c.seed}});
  run.manifest["checkpoints"] = proj ? json{c.interpolator, c.projector} : json{c.interpolator};
  run.manifest["outputs"] = {{"frames", up.size()}};
}

void cmd_refine(Run& run) {
  const ExperimentConfig& c = run.cfg;
  require(c.output, "output");
  require(c.model, "model");
  const LoadedCheckpoint ck = load_checkpoint_any(c.model, {ModelRole::image, ModelRole::projector});
  const VideoClip clip = load_input(run);
  RandomSource rng(c.seed);
  std::vector<Tensor> images;
  for (int i = 0; i < c.samples; ++i) {
    images.push_back(refine_image(clip[0], ck.model, c.t_start, rng, sampler_options(c)));
  }
  save_video_frames(images, c.output);
  json metrics = json::array();
  for (const Tensor& im : images) metrics.push_back(psnr(im, clip[0]));
  write_provenance(run.out_dir(),
                   std::vector<FrameOrigin>(images.size(), FrameOrigin::predicted_corrected),
                   {{"model", c.model}, {"t_start", c.t_start}, {"input", c.input}, {"seed", c.seed}});
  run.manifest["checkpoints"] = {c.model};
  run.manifest["metrics"] = {{"psnr_vs_input", metrics}};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void cmd_evaluate(Run& run) {
  const ExperimentConfig& c = run.cfg;
  require(c.output, "output");
  require(c.input, "input");
  require(c.reference, "reference");
  const VideoClip reference = load_video_frames(c.reference, c.max_side);
  std::vector<VideoClip> samples;
  for (const std::string& p : split_list(c.input)) samples.push_back(load_video_frames(p, c.max_side));
  if (samples.empty()) throw ConfigError("evaluate needs at least one --input video");

  json per_sample = json::array();
  double div_sum = 0.0, dist_sum = 0.0;
  fs::create_directories(run.out_dir());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const NNField field = compute_nnf(samples[i], reference);
    const double d = nnfdiv(field);
    const double e = nnfdist(field);
    div_sum += d;
    dist_sum += e;
    per_sample.push_back({{"input", split_list(c.input)[i]}, {"nnfdiv", d}, {"nnfdist", e}});
    if (c.colormaps) {
      const NNFColormap cm = nnf_colormap(field);
      const fs::path base = run.out_dir() / ("nnf_" + std::to_string(i + 1));
      save_video_frames(cm.spatial, (base / "spatial").string());
      save_video_frames(cm.temporal, (base / "temporal").string());
    }
  }
  const double m = static_cast<double>(samples.size());
  json metrics = {{"nnfdiv", div_sum / m}, {"nnfdist", dist_sum / m}, {"samples", per_sample}};
  bool same_shape = true;
  for (const VideoClip& s : samples) {
    same_shape = same_shape && s.size() == samples[0].size() &&
                 s.frame_shape() == samples[0].frame_shape();
  }
  metrics["singan_diversity"] = samples.size() >= 2 && same_shape
                                    ? json(singan_diversity(samples, reference))
                                    : json(nullptr);
  if (!c.features_generated.empty() && !c.features_reference.empty()) {
    metrics["svfid"] = frechet_distance(fit_gaussian(load_activations_csv(c.features_generated)),
                                        fit_gaussian(load_activations_csv(c.features_reference)));
  } else {
    metrics["svfid"] = nullptr;
  }
  write_json_atomic((run.out_dir() / "metrics.json").string(), metrics);
  run.manifest["metrics"] = metrics;
  run.manifest["outputs"] = {(run.out_dir() / "metrics.json").string()};
}

void cmd_benchmark(Run& run) {
  const ExperimentConfig& c = run.cfg;
  require(c.output, "output");
  const VideoClip clip = load_input(run);
  if (std::abs(c.k) > c.k_range) {
    throw ConfigError("benchmark gap k=" + std::to_string(c.k) + " exceeds k_range " +
                      std::to_string(c.k_range));
  }
  const TrainTask task = train_task_for(c, ModelRole::predictor);
  const DiffusionSchedule sched = schedule_for(c, ModelRole::predictor);
  const DenoiserConfig net = denoiser_config(c);
  const SamplerOptions opts = sampler_options(c);
  std::vector<std::shared_ptr<Model>> keep;
  TrainFn train_fn = [&](const VideoClip& window, RandomSource& rng) -> FramePredictor {
    auto model = std::make_shared<Model>(
        train_predictor(window, task, sched, net, rng, progress_logger(run.log, c.log_every, "predictor"))
            .model);
    keep.push_back(model);
    return [model, opts](const Tensor& current, int k, RandomSource& r) {
      return sample_loop(make_denoise_fn(*model, {current}, k), current.shape(), model->mode,
                         model->schedule, r, opts);
    };
  };
  RandomSource rng(c.seed);
  const auto records =
      frame_prediction_benchmark(clip, train_fn, c.n, c.speed, c.k, c.trials, rng, c.max_test);

  fs::create_directories(run.out_dir());
  std::ofstream csv(run.out_dir() / "benchmark.csv");
  if (!csv) throw IoError("cannot write benchmark.csv");
  csv << "trial,n_train,speed,k,psnr_model,psnr_baseline,window_start,test_frames,run_seed\n";
  double model_sum = 0.0, base_sum = 0.0;
  for (const BenchmarkRecord& r : records) {
    csv << r.trial << ',' << r.n_train << ',' << r.speed << ',' << r.frame_gap << ','
        << fmt(r.psnr_model) << ',' << fmt(r.psnr_baseline) << ',' << r.window_start << ','
        << r.test_frames << ',' << r.run_seed << '\n';
    model_sum += r.psnr_model;
    base_sum += r.psnr_baseline;
  }
  const double m = static_cast<double>(records.size());
  run.manifest["metrics"] = {{"psnr_model", model_sum / m}, {"psnr_baseline", base_sum / m}};
  run.manifest["outputs"] = {(run.out_dir() / "benchmark.csv").string()};
}

// Replicates an image into a 3-frame clip so space-time patch metrics apply.
VideoClip as_still_clip(const Tensor& image) { return VideoClip({image, image, image}); }

void cmd_sweep(Run& run) {
  const ExperimentConfig& c = run.cfg;
  require(c.output, "output");
  const VideoClip clip = load_input(run);
  const Tensor& image = clip[0];
  const auto fractions = parse_double_list(c.crop_fractions);
  const auto depths = parse_int_list(c.depths);
  RandomSource root(c.seed);

  fs::create_directories(run.out_dir());
  std::ofstream csv(run.out_dir() / "sweep.csv");
  if (!csv) throw IoError("cannot write sweep.csv");
  csv << "crop_fraction,depth,run_seed,final_loss,nnfdist,nnfdiv\n";
  json rows = json::array();
  for (double f : fractions) {
    for (int d : depths) {
      ExperimentConfig rc = c;
      rc.crop_fraction = f;
      rc.depth = d;
      rc.role = "image";
      validate_config(rc);
      RandomSource rng = root.fork();
      const std::uint64_t run_seed = rng.seed();
      TrainResult res = train_image_ddpm(image, train_task_for(rc, ModelRole::image),
                                         schedule_for(rc, ModelRole::image), denoiser_config(rc),
                                         rng, progress_logger(run.log, c.log_every, "image"));
      double dist = 0.0, div = 0.0;
      for (int s = 0; s < c.samples; ++s) {
        const Tensor sample = generate_image(res.model, image.shape(), rng, sampler_options(rc));
        const NNField field = compute_nnf(as_still_clip(sample), as_still_clip(image));
        dist += nnfdist(field);
        div += nnfdiv(field);
      }
      dist /= c.samples;
      div /= c.samples;
      const double loss = tail_mean_loss(res.trace);
      csv << fmt(f) << ',' << d << ',' << run_seed << ',' << fmt(loss) << ',' << fmt(dist) << ','
          << fmt(div) << '\n';
      rows.push_back({{"crop_fraction", f}, {"depth", d}, {"run_seed", run_seed},
                      {"final_loss", loss}, {"nnfdist", dist}, {"nnfdiv", div}});
    }
  }
  run.manifest["metrics"] = {{"grid", rows}};
  run.manifest["outputs"] = {(run.out_dir() / "sweep.csv").string()};
}

json error_record(const std::string& kind, const std::string& message, const std::string& command) {
  json e = {{"error", {{"kind", kind}, {"message", message}}}};
  if (!command.empty()) e["command"] = command;
  return e;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Single-image / single-video diffusion toolkit"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_path;
  bool print_schema = false;
  app.add_option("--config", config_path, "JSON config file; flags override its values");
  app.add_flag("--print-schema", print_schema, "print the config JSON schema and exit");

  std::map<std::string, std::string> text_values;
  std::deque<bool> flag_values;
  std::vector<std::pair<std::string, CLI::Option*>> field_options;
  for (const ConfigField& f : config_fields()) {
    std::string flag = "--" + f.name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    CLI::Option* opt;
    if (f.type == "boolean") {
      flag_values.push_back(false);
      opt = app.add_flag(flag, flag_values.back(), f.description);
    } else {
      opt = app.add_option(flag, text_values[f.name], f.description);
    }
    field_options.emplace_back(f.name, opt);
  }

  const std::map<std::string, void (*)(Run&)> commands = {
      {"train", cmd_train},
      {"generate-image", cmd_generate_image},
      {"generate-video", cmd_generate_video},
      {"extrapolate", cmd_extrapolate},
      {"upsample", cmd_upsample},
      {"refine", cmd_refine},
      {"evaluate", cmd_evaluate},
      {"benchmark", cmd_benchmark},
      {"sweep", cmd_sweep},
  };
  const std::map<std::string, std::string> help = {
      {"train", "train one model (--role) on --input and write a checkpoint to --output"},
      {"generate-image", "sample images from an image/projector checkpoint"},
      {"generate-video", "generate a new video with predictor + projector"},
      {"extrapolate", "continue --input forward or backward in time"},
      {"upsample", "double the frame rate of --input with an interpolator"},
      {"refine", "noise and denoise an (edited) image with an image model"},
      {"evaluate", "NNF metrics of generated videos against --reference"},
      {"benchmark", "future-frame prediction benchmark against the copy baseline"},
      {"sweep", "crop-size / depth sweep of single-image models"},
  };
  for (const auto& [name, fn] : commands) app.add_subcommand(name, help.at(name));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << error_record("usage", e.what(), "").dump() << '\n';
    return kExitUsage;
  }

  if (print_schema) {
    out << config_schema().dump(2) << '\n';
    return kExitOk;
  }
  std::string command;
  for (const auto* sub : app.get_subcommands()) command = sub->get_name();
  if (command.empty()) {
    err << error_record("usage", "a subcommand is required", "").dump() << '\n';
    return kExitUsage;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    std::size_t flag_index = 0;
    for (const auto& [name, opt] : field_options) {
      const bool is_flag = opt->get_expected_max() == 0;
      if (opt->count() > 0) {
        if (is_flag) {
          set_config_field(cfg, name, flag_values[flag_index] ? "true" : "false");
        } else {
          set_config_field(cfg, name, text_values[name]);
        }
      }
      if (is_flag) ++flag_index;
    }
    validate_config(cfg);
    Run run{command, cfg, err, json::object()};
    commands.at(command)(run);
    run.finish();
    out << json{{"status", "ok"}, {"command", command}, {"output", cfg.output}}.dump() << '\n';
    return kExitOk;
  } catch (const Error& e) {
    err << error_record(e.kind(), e.what(), command).dump() << '\n';
  } catch (const std::filesystem::filesystem_error& e) {
    err << error_record("io", e.what(), command).dump() << '\n';
  } catch (const std::exception& e) {
    err << error_record("internal", e.what(), command).dump() << '\n';
  }
  return kExitFailure;
}

}  // namespace solodiff
