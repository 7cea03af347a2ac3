#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "solodiff/denoiser.hpp"
#include "solodiff/diffusion.hpp"
#include "solodiff/random.hpp"
#include "solodiff/tensor.hpp"

namespace solodiff {

/// What a trained network is for. `image` is a single-image model; the other
/// three are the video models.
enum class ModelRole { image, projector, predictor, interpolator };

std::string to_string(ModelRole role);
ModelRole model_role_from_string(const std::string& s);

/// Loss target each role trains with unless an ablation overrides it.
PredictionTarget default_loss_mode(ModelRole role);

/// Number of clean conditioning frames the role's network receives.
int conditioning_frames(ModelRole role);

/// Fills in the role-dependent parts of an architecture: input channels and
/// whether the frame gap is embedded. `channels` is the image channel count.
DenoiserConfig config_for_role(DenoiserConfig base, ModelRole role, int channels);

struct CropPolicy {
  /// Per-dimension crop size as a fraction of the source.
  double fraction = 0.95;
};

struct CropWindow {
  int y = 0;
  int x = 0;
  int height = 0;
  int width = 0;
};

/// Crop size is round(fraction * dim); the offset is uniform over all valid
/// positions. Throws ParameterError if the crop would be below `min_size`.
CropWindow sample_crop_window(Shape source, const CropPolicy& policy, int min_size,
                              RandomSource& rng);

std::pair<Tensor, CropWindow> sample_crop(const Tensor& source, const CropPolicy& policy,
                                          RandomSource& rng, int min_size = 6);

/// Frame-gap curriculum. The magnitude cap grows from 1 to k_range in equal
/// steps over the first `warmup` iterations; before the first step only k = 1
/// is drawn, afterwards k is uniform over {+-1, ..., +-cap}.
struct CurriculumState {
  long iteration = 0;
  int k_range = 3;
  long warmup = 0;
  /// Ablation: restrict training to k = +-1.
  bool only_pm1 = false;

  int magnitude_cap() const;
  std::vector<int> support() const;
};

int curriculum_k(const CurriculumState& state, RandomSource& rng);

struct LearningRateSchedule {
  double initial = 2e-4;
  double decayed = 2e-5;
  long decay_after = 100000;

  double at(long iteration) const { return iteration < decay_after ? initial : decayed; }
};

struct TrainTask {
  ModelRole role = ModelRole::image;
  PredictionTarget loss_mode = PredictionTarget::x0;
  long iterations = 50000;
  LearningRateSchedule lr;
  int k_range = 3;
  /// Curriculum length in iterations; negative means 20% of `iterations`.
  long curriculum_warmup = -1;
  bool k_only_pm1 = false;
  CropPolicy crop;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double grad_clip = 1.0;

  /// Role defaults: loss mode per role and the full-scale iteration budget.
  static TrainTask for_role(ModelRole role);

  long warmup_iterations() const;
  void validate() const;
};

struct LossRecord {
  long iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
  /// Frame gap used at this step (0 for roles without one).
  int k = 0;
};

/// A trained network together with everything needed to sample from it.
struct Model {
  ModelRole role;
  PredictionTarget mode;
  DiffusionSchedule schedule;
  Denoiser net;
  long iterations = 0;
  int k_range = 3;
};

struct TrainResult {
  Model model;
  std::vector<LossRecord> trace;
};

using ProgressFn = std::function<void(const LossRecord&)>;

/// Adam with bias correction; state is kept in float like the parameters.
class Adam {
 public:
  explicit Adam(std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<float> params, std::span<const float> grads, double lr);
  long steps() const { return steps_; }

 private:
  double beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<float> m_, v_;
};

/// Rescales `grads` so its L2 norm is at most `max_norm`; returns the norm
/// before clipping.
double clip_gradient_norm(std::span<float> grads, double max_norm);

/// Single-image training loop: random crop, uniform t, Gaussian noise, one
/// gradient step per iteration.
TrainResult train_image_ddpm(const Tensor& image, const TrainTask& task,
                             const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                             RandomSource& rng, const ProgressFn& progress = {});

/// Unconditional model over crops of a uniformly random frame per iteration.
TrainResult train_projector(const VideoClip& video, const TrainTask& task,
                            const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                            RandomSource& rng, const ProgressFn& progress = {});

/// Model of frame n+k given clean frame n and the gap k.
TrainResult train_predictor(const VideoClip& video, const TrainTask& task,
                            const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                            RandomSource& rng, const ProgressFn& progress = {});

/// Model of frame n+1 given clean frames n and n+2.
TrainResult train_interpolator(const VideoClip& video, const TrainTask& task,
                               const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                               RandomSource& rng, const ProgressFn& progress = {});

/// Dispatches on task.role. Image models use the first frame of `video`.
TrainResult train_model(const VideoClip& video, const TrainTask& task,
                        const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                        RandomSource& rng, const ProgressFn& progress = {});

/// Sampler callback for a model with fixed conditioning frames and gap.
DenoiseFn make_denoise_fn(const Model& model, std::vector<Tensor> cond = {},
                          std::optional<int> k = std::nullopt);

}  // namespace solodiff
