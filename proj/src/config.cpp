#include "solodiff/config.hpp"

#include <fstream>
#include <limits>
#include <sstream>
#include <variant>

#include "solodiff/error.hpp"

namespace solodiff {

namespace {

using C = ExperimentConfig;
using Member = std::variant<std::string C::*, int C::*, long C::*, std::uint64_t C::*, double C::*,
                            bool C::*>;

template <typename P>
struct MemberValue;
template <typename V>
struct MemberValue<V C::*> {
  using type = V;
};

struct Entry {
  ConfigField info;
  Member member;
};

std::string type_of(const Member& m) {
  switch (m.index()) {
    case 0:
      return "string";
    case 1:
    case 2:
    case 3:
      return "integer";
    case 4:
      return "number";
    default:
      return "boolean";
  }
}

Entry field(const char* name, Member m, const char* doc) {
  return Entry{ConfigField{name, type_of(m), doc}, m};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      field("role", &C::role, "image | projector | predictor | interpolator"),
      field("input", &C::input, "input image, frame directory or video file"),
      field("output", &C::output, "output directory (or file for metrics)"),
      field("seed", &C::seed, "seed of every random stream in the run"),
      field("max_side", &C::max_side, "downscale inputs so the long side is at most this (0: off)"),
      field("log_every", &C::log_every, "training progress line every N iterations (0: off)"),
      field("depth", &C::depth, "number of residual blocks"),
      field("width", &C::width, "block channel count"),
      field("embed_dim", &C::embed_dim, "step / frame-gap embedding size"),
      field("spatial_kernel", &C::spatial_kernel, "depthwise kernel size"),
      field("stem_kernel", &C::stem_kernel, "stem convolution kernel size"),
      field("expansion", &C::expansion, "pointwise expansion factor inside a block"),
      field("schedule", &C::schedule, "auto | linear | cosine (auto: linear for image, cosine for video)"),
      field("diffusion_steps", &C::diffusion_steps, "number of diffusion steps T"),
      field("beta_start", &C::beta_start, "first beta of the linear schedule"),
      field("beta_end", &C::beta_end, "last beta of the linear schedule"),
      field("posterior_variance", &C::posterior_variance, "beta_tilde | beta"),
      field("clamp_x0", &C::clamp_x0, "clamp the clean estimate to [-1, 1] while sampling"),
      field("iterations", &C::iterations,
            "training iterations (0: 50K image, 100K projector, 200K predictor, 50K interpolator)"),
      field("lr", &C::lr, "Adam learning rate"),
      field("lr_decayed", &C::lr_decayed, "learning rate after lr_decay_after iterations"),
      field("lr_decay_after", &C::lr_decay_after, "iteration at which the learning rate drops"),
      field("grad_clip", &C::grad_clip, "global gradient-norm clip (<= 0: off)"),
      field("crop_fraction", &C::crop_fraction, "training crop size as a fraction of the frame"),
      field("k_range", &C::k_range, "largest |k| the predictor trains on"),
      field("curriculum_warmup", &C::curriculum_warmup,
            "iterations over which the k range widens (-1: 20% of iterations)"),
      field("noise_prediction", &C::noise_prediction,
            "ablation: image/projector/interpolator predict noise instead of the clean frame"),
      field("with_attention", &C::with_attention, "ablation: add a global self-attention layer"),
      field("with_resampling", &C::with_resampling, "ablation: add one down/up-sampling level"),
      field("resnet_blocks", &C::resnet_blocks, "ablation: ResNet blocks instead of ConvNeXt"),
      field("no_projector", &C::no_projector, "ablation: skip projector correction of new frames"),
      field("k_only_pm1", &C::k_only_pm1, "ablation: train the predictor on k = +-1 only"),
      field("model", &C::model, "checkpoint of an image or projector model"),
      field("predictor", &C::predictor, "predictor checkpoint"),
      field("projector", &C::projector, "projector checkpoint"),
      field("interpolator", &C::interpolator, "interpolator checkpoint"),
      field("frames", &C::frames, "number of frames to generate"),
      field("direction", &C::direction, "forward | backward"),
      field("t_corr", &C::t_corr, "projector correction depth (0: off)"),
      field("seed_frame", &C::seed_frame,
            "1-based input frame seeding generate-video (0: sample it with the projector)"),
      field("t_start", &C::t_start, "noise depth for refine"),
      field("out_height", &C::out_height, "generated image height (0: training size)"),
      field("out_width", &C::out_width, "generated image width (0: training size)"),
      field("samples", &C::samples, "number of samples to generate"),
      field("reference", &C::reference, "reference video for evaluate"),
      field("features_generated", &C::features_generated,
            "CSV of feature activations of the generated video (enables SVFID)"),
      field("features_reference", &C::features_reference,
            "CSV of feature activations of the reference video (enables SVFID)"),
      field("colormaps", &C::colormaps, "write NNF colour-wheel images in evaluate"),
      field("n", &C::n, "benchmark training window length"),
      field("speed", &C::speed, "benchmark temporal subsampling factor"),
      field("k", &C::k, "benchmark prediction gap"),
      field("trials", &C::trials, "benchmark trials"),
      field("max_test", &C::max_test, "benchmark held-out frames per trial"),
      field("crop_fractions", &C::crop_fractions, "sweep: comma-separated crop fractions"),
      field("depths", &C::depths, "sweep: comma-separated network depths"),
  };
  return table;
}

const Entry& find_entry(const std::string& name) {
  for (const Entry& e : entries()) {
    if (e.info.name == name) return e;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

template <typename I>
I parse_integer(const std::string& name, const std::string& v) {
  try {
    std::size_t used = 0;
    long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    if (x < static_cast<long long>(std::numeric_limits<I>::min()) ||
        (x > 0 && static_cast<unsigned long long>(x) >
                      static_cast<unsigned long long>(std::numeric_limits<I>::max()))) {
      throw std::out_of_range(v);
    }
    return static_cast<I>(x);
  } catch (const std::logic_error&) {
    throw ConfigError("'" + name + "' expects an integer, got '" + v + "'");
  }
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    for (const Entry& e : entries()) f.push_back(e.info);
    return f;
  }();
  return fields;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const Entry& e : entries()) {
    std::visit([&](auto m) { j[e.info.name] = cfg.*m; }, e.member);
  }
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const Entry& e = find_entry(key);
    std::visit(
        [&](auto m) {
          using V = typename MemberValue<decltype(m)>::type;
          bool ok = false;
          if constexpr (std::is_same_v<V, std::string>) {
            ok = value.is_string();
          } else if constexpr (std::is_same_v<V, bool>) {
            ok = value.is_boolean();
          } else if constexpr (std::is_same_v<V, double>) {
            ok = value.is_number();
          } else {
            ok = value.is_number_integer();
            if (ok && std::is_unsigned_v<V> && !value.is_number_unsigned() &&
                value.template get<long long>() < 0) {
              ok = false;
            }
          }
          if (!ok) {
            throw ConfigError("config key '" + key + "' expects a " + e.info.type + ", got " +
                              value.dump());
          }
          base.*m = value.template get<V>();
        },
        e.member);
  }
  return base;
}

void set_config_field(ExperimentConfig& cfg, const std::string& name, const std::string& value) {
  const Entry& e = find_entry(name);
  std::visit(
      [&](auto m) {
        using V = typename MemberValue<decltype(m)>::type;
        if constexpr (std::is_same_v<V, std::string>) {
          cfg.*m = value;
        } else if constexpr (std::is_same_v<V, bool>) {
          if (value == "true" || value == "1" || value.empty()) {
            cfg.*m = true;
          } else if (value == "false" || value == "0") {
            cfg.*m = false;
          } else {
            throw ConfigError("'" + name + "' expects true/false, got '" + value + "'");
          }
        } else if constexpr (std::is_same_v<V, double>) {
          try {
            std::size_t used = 0;
            cfg.*m = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
          } catch (const std::logic_error&) {
            throw ConfigError("'" + name + "' expects a number, got '" + value + "'");
          }
        } else {
          cfg.*m = parse_integer<V>(name, value);
        }
      },
      e.member);
}

ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + ex.what());
  }
  return config_from_json(j, std::move(base));
}

nlohmann::json config_schema() {
  const nlohmann::json defaults = config_to_json(ExperimentConfig{});
  nlohmann::json props = nlohmann::json::object();
  for (const ConfigField& f : config_fields()) {
    props[f.name] = {{"type", f.type}, {"description", f.description}, {"default", defaults[f.name]}};
  }
  return {{"$schema", "http://json-schema.org/draft-07/schema#"},
          {"title", "solodiff experiment config"},
          {"type", "object"},
          {"additionalProperties", false},
          {"properties", props}};
}

void validate_config(const ExperimentConfig& c) {
  const auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  try {
    model_role_from_string(c.role);
    if (c.schedule != "auto") schedule_kind_from_string(c.schedule);
    posterior_variance_from_string(c.posterior_variance);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  need(c.direction == "forward" || c.direction == "backward",
       "direction must be forward or backward, got '" + c.direction + "'");
  need(c.max_side >= 0, "max_side must be >= 0");
  need(c.depth >= 1 && c.width >= 1, "depth and width must be >= 1");
  need(c.embed_dim >= 2 && c.embed_dim % 2 == 0, "embed_dim must be even and >= 2");
  need(c.spatial_kernel % 2 == 1 && c.stem_kernel % 2 == 1 && c.spatial_kernel > 0 &&
           c.stem_kernel > 0,
       "kernel sizes must be odd and positive");
  need(c.expansion >= 1, "expansion must be >= 1");
  need(c.diffusion_steps >= 1, "diffusion_steps must be >= 1");
  need(c.iterations >= 0, "iterations must be >= 0");
  need(c.lr > 0 && c.lr_decayed > 0, "learning rates must be positive");
  need(c.crop_fraction > 0 && c.crop_fraction <= 1, "crop_fraction must be in (0, 1]");
  need(c.k_range >= 1, "k_range must be >= 1");
  need(c.frames >= 0, "frames must be >= 0");
  need(c.t_corr >= 0 && c.t_corr <= c.diffusion_steps, "t_corr must be in [0, diffusion_steps]");
  need(c.t_start >= 1 && c.t_start <= c.diffusion_steps, "t_start must be in [1, diffusion_steps]");
  need(c.seed_frame >= 0, "seed_frame must be >= 0");
  need(c.out_height >= 0 && c.out_width >= 0, "output size must be >= 0");
  need(c.samples >= 1, "samples must be >= 1");
  need(c.n >= 1 && c.speed >= 1 && c.k != 0 && c.trials >= 1 && c.max_test >= 1,
       "benchmark needs n, speed, trials, max_test >= 1 and k != 0");
  parse_double_list(c.crop_fractions);
  parse_int_list(c.depths);
}

ModelRole config_role(const ExperimentConfig& cfg) {
  try {
    return model_role_from_string(cfg.role);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

DenoiserConfig denoiser_config(const ExperimentConfig& c) {
  DenoiserConfig d;
  d.depth = c.depth;
  d.width = c.width;
  d.embed_dim = c.embed_dim;
  d.spatial_kernel = c.spatial_kernel;
  d.stem_kernel = c.stem_kernel;
  d.expansion = c.expansion;
  d.block_kind = c.resnet_blocks ? BlockKind::resnet : BlockKind::convnext;
  d.with_attention = c.with_attention;
  d.with_resampling = c.with_resampling;
  d.max_frame_gap = std::max(3, c.k_range);
  return d;
}

DiffusionSchedule schedule_for(const ExperimentConfig& c, ModelRole role) {
  ScheduleKind kind;
  if (c.schedule == "auto") {
    kind = role == ModelRole::image ? ScheduleKind::linear : ScheduleKind::cosine;
  } else {
    kind = schedule_kind_from_string(c.schedule);
  }
  return build_schedule(kind, c.diffusion_steps, c.beta_start, c.beta_end);
}

TrainTask train_task_for(const ExperimentConfig& c, ModelRole role) {
  TrainTask t = TrainTask::for_role(role);
  if (c.iterations > 0) t.iterations = c.iterations;
  if (c.noise_prediction) t.loss_mode = PredictionTarget::epsilon;
  t.lr.initial = c.lr;
  t.lr.decayed = c.lr_decayed;
  t.lr.decay_after = c.lr_decay_after;
  t.grad_clip = c.grad_clip;
  t.crop.fraction = c.crop_fraction;
  t.k_range = c.k_range;
  t.curriculum_warmup = c.curriculum_warmup;
  t.k_only_pm1 = c.k_only_pm1;
  return t;
}

SamplerOptions sampler_options(const ExperimentConfig& c) {
  SamplerOptions o;
  o.variance = posterior_variance_from_string(c.posterior_variance);
  o.clamp_x0 = c.clamp_x0;
  return o;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad number '" + item + "' in list '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list '" + s + "'");
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<int>("list", item));
  if (out.empty()) throw ConfigError("empty list '" + s + "'");
  return out;
}

}  // namespace solodiff
