#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "solodiff/denoiser.hpp"
#include "solodiff/diffusion.hpp"
#include "solodiff/trainer.hpp"

namespace solodiff {

/// Every knob of a run. Field names double as JSON keys and (with '_'
/// replaced by '-') as CLI flags. Values of "auto" / 0 / -1 noted below are
/// resolved per role by denoiser_config(), schedule_for() and train_task_for().
struct ExperimentConfig {
  // Run
  std::string role = "image";
  std::string input;
  std::string output;
  std::uint64_t seed = 0;
  int max_side = 256;
  int log_every = 1000;

  // Network
  int depth = 16;
  int width = 64;
  int embed_dim = 64;
  int spatial_kernel = 7;
  int stem_kernel = 3;
  int expansion = 4;

  // Diffusion
  std::string schedule = "auto";  // linear for image models, cosine for video models
  int diffusion_steps = 50;
  double beta_start = 2e-3;
  double beta_end = 0.4;
  std::string posterior_variance = "beta_tilde";
  bool clamp_x0 = true;

  // Training
  long iterations = 0;  // 0: role default
  double lr = 2e-4;
  double lr_decayed = 2e-5;
  long lr_decay_after = 100000;
  double grad_clip = 1.0;
  double crop_fraction = 0.95;
  int k_range = 3;
  long curriculum_warmup = -1;  // -1: 20% of iterations

  // Ablations
  bool noise_prediction = false;
  bool with_attention = false;
  bool with_resampling = false;
  bool resnet_blocks = false;
  bool no_projector = false;
  bool k_only_pm1 = false;

  // Generation
  std::string model;
  std::string predictor;
  std::string projector;
  std::string interpolator;
  int frames = 24;
  std::string direction = "forward";
  int t_corr = 3;
  int seed_frame = 0;  // 1-based input frame to seed generate-video; 0: projector sample
  int t_start = 3;
  int out_height = 0;  // 0: training frame size
  int out_width = 0;
  int samples = 1;

  // Evaluation
  std::string reference;
  std::string features_generated;
  std::string features_reference;
  bool colormaps = false;
  int n = 16;
  int speed = 1;
  int k = 1;
  int trials = 5;
  int max_test = 100;
  std::string crop_fractions = "0.5,0.75,0.95";
  std::string depths = "4,8,16";

  bool operator==(const ExperimentConfig&) const = default;
};

struct ConfigField {
  std::string name;
  /// "string", "integer", "number" or "boolean".
  std::string type;
  std::string description;
};

/// Table of all fields in declaration order.
const std::vector<ConfigField>& config_fields();

nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Applies the keys of `j` on top of `base`. Unknown keys and type mismatches
/// raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});

/// Sets one field from its textual form (as given on a command line).
void set_config_field(ExperimentConfig& cfg, const std::string& name, const std::string& value);

ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {});

/// JSON Schema (draft-07) describing the config file.
nlohmann::json config_schema();

/// Throws ConfigError on out-of-range or unknown enumerated values.
void validate_config(const ExperimentConfig& cfg);

/// Settings derived from a config for one role.
ModelRole config_role(const ExperimentConfig& cfg);
DenoiserConfig denoiser_config(const ExperimentConfig& cfg);
DiffusionSchedule schedule_for(const ExperimentConfig& cfg, ModelRole role);
TrainTask train_task_for(const ExperimentConfig& cfg, ModelRole role);
SamplerOptions sampler_options(const ExperimentConfig& cfg);

std::vector<double> parse_double_list(const std::string& s);
std::vector<int> parse_int_list(const std::string& s);

}  // namespace solodiff
