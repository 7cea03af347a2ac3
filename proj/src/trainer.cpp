#include "solodiff/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "solodiff/error.hpp"

namespace solodiff {

std::string to_string(ModelRole role) {
  switch (role) {
    case ModelRole::image:
      return "image";
    case ModelRole::projector:
      return "projector";
    case ModelRole::predictor:
      return "predictor";
    case ModelRole::interpolator:
      return "interpolator";
  }
  return "?";
}

ModelRole model_role_from_string(const std::string& s) {
  if (s == "image") return ModelRole::image;
  if (s == "projector") return ModelRole::projector;
  if (s == "predictor") return ModelRole::predictor;
  if (s == "interpolator") return ModelRole::interpolator;
  throw ParameterError("unknown role '" + s + "' (expected image|projector|predictor|interpolator)");
}

PredictionTarget default_loss_mode(ModelRole role) {
  return role == ModelRole::predictor ? PredictionTarget::epsilon : PredictionTarget::x0;
}

int conditioning_frames(ModelRole role) {
  switch (role) {
    case ModelRole::predictor:
      return 1;
    case ModelRole::interpolator:
      return 2;
    default:
      return 0;
  }
}

DenoiserConfig config_for_role(DenoiserConfig base, ModelRole role, int channels) {
  base.out_channels = channels;
  base.in_channels = channels * (1 + conditioning_frames(role));
  base.uses_frame_gap = role == ModelRole::predictor;
  return base;
}

CropWindow sample_crop_window(Shape source, const CropPolicy& policy, int min_size,
                              RandomSource& rng) {
  if (!(policy.fraction > 0.0 && policy.fraction <= 1.0)) {
    throw ParameterError("crop fraction must be in (0, 1], got " + std::to_string(policy.fraction));
  }
  CropWindow w;
  w.height = static_cast<int>(std::lround(policy.fraction * source.height));
  w.width = static_cast<int>(std::lround(policy.fraction * source.width));
  if (w.height < min_size || w.width < min_size) {
    throw ParameterError("crop " + std::to_string(w.height) + "x" + std::to_string(w.width) +
                         " of " + source.str() + " is below the network minimum " +
                         std::to_string(min_size));
  }
  w.y = rng.uniform_int(0, source.height - w.height);
  w.x = rng.uniform_int(0, source.width - w.width);
  return w;
}

std::pair<Tensor, CropWindow> sample_crop(const Tensor& source, const CropPolicy& policy,
                                          RandomSource& rng, int min_size) {
  const CropWindow w = sample_crop_window(source.shape(), policy, min_size, rng);
  return {source.crop(w.y, w.x, w.height, w.width), w};
}

int CurriculumState::magnitude_cap() const {
  const int full = only_pm1 ? 1 : k_range;
  if (warmup <= 0 || iteration >= warmup) return full;
  const long stage = iteration * k_range / warmup;
  return static_cast<int>(std::min<long>(stage, full));
}

std::vector<int> CurriculumState::support() const {
  const int cap = magnitude_cap();
  if (cap == 0) return {1};
  std::vector<int> out;
  for (int m = -cap; m <= cap; ++m) {
    if (m != 0) out.push_back(m);
  }
  return out;
}

int curriculum_k(const CurriculumState& state, RandomSource& rng) {
  const int cap = state.magnitude_cap();
  if (cap == 0) return 1;
  const int i = rng.uniform_int(0, 2 * cap - 1);
  return i < cap ? i - cap : i - cap + 1;
}

TrainTask TrainTask::for_role(ModelRole role) {
  TrainTask t;
  t.role = role;
  t.loss_mode = default_loss_mode(role);
  switch (role) {
    case ModelRole::image:
      t.iterations = 50000;
      break;
    case ModelRole::predictor:
      t.iterations = 200000;
      break;
    case ModelRole::projector:
      t.iterations = 100000;
      break;
    case ModelRole::interpolator:
      t.iterations = 50000;
      break;
  }
  return t;
}

long TrainTask::warmup_iterations() const {
  return curriculum_warmup >= 0 ? curriculum_warmup : iterations / 5;
}

void TrainTask::validate() const {
  if (iterations < 1) throw ParameterError("iterations must be >= 1");
  if (k_range < 1) throw ParameterError("k_range must be >= 1");
  if (!(lr.initial > 0.0) || !(lr.decayed > 0.0)) throw ParameterError("learning rates must be > 0");
  if (!(crop.fraction > 0.0 && crop.fraction <= 1.0)) {
    throw ParameterError("crop fraction must be in (0, 1]");
  }
}

Adam::Adam(std::size_t size, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0f), v_(size, 0.0f) {}

void Adam::step(std::span<float> params, std::span<const float> grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ParameterError("optimizer state does not match parameter count");
  }
  ++steps_;
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  const float step = static_cast<float>(lr * std::sqrt(c2) / c1);
  const float eps = static_cast<float>(eps_ * std::sqrt(c2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
    params[i] -= step * m_[i] / (std::sqrt(v_[i]) + eps);
  }
}

double clip_gradient_norm(std::span<float> grads, double max_norm) {
  double sq = 0.0;
  for (float g : grads) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    for (float& g : grads) g *= scale;
  }
  return norm;
}

namespace {

/// One training example before noising: the clean target crop, the clean
/// conditioning crops and the frame gap (if any).
struct Example {
  Tensor target;
  std::vector<Tensor> cond;
  std::optional<int> k;
};

using ExampleFn = std::function<Example(long iteration, RandomSource& rng)>;

TrainResult run_training(const TrainTask& task, const DiffusionSchedule& sched,
                         const DenoiserConfig& cfg, RandomSource& rng, const ExampleFn& next,
                         const ProgressFn& progress) {
  task.validate();
  sched.validate();
  cfg.validate();
  Denoiser net = build_denoiser(cfg, rng.next_u64());
  Adam adam(net.parameter_count());
  auto tape = Denoiser::make_tape();
  std::vector<LossRecord> trace;
  trace.reserve(static_cast<std::size_t>(task.iterations));

  for (long it = 0; it < task.iterations; ++it) {
    Example ex = next(it, rng);
    const int t = rng.uniform_int(1, sched.steps);
    const Tensor eps = rng.normal_tensor(ex.target.shape());
    const NoisySample noisy = forward_diffuse(ex.target, t, eps, sched);

    std::vector<Tensor> parts;
    parts.reserve(ex.cond.size() + 1);
    parts.push_back(noisy.x_t);
    for (Tensor& c : ex.cond) parts.push_back(std::move(c));
    const int h = ex.target.height();
    const int w = ex.target.width();

    net.zero_grad();
    const nn::Mat<float> out = net.forward(to_feature_map(parts), h, w, t, ex.k, tape.get());
    const Tensor& goal = task.loss_mode == PredictionTarget::epsilon ? eps : ex.target;
    const Eigen::Map<const nn::Mat<float>> goal_map(goal.data().data(), out.rows(), out.cols());
    nn::Mat<float> grad = out - goal_map;
    const double loss = static_cast<double>(grad.squaredNorm()) / static_cast<double>(grad.size());
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite loss at iteration " + std::to_string(it) + " (role " +
                          to_string(task.role) + ", t=" + std::to_string(t) +
                          (ex.k ? ", k=" + std::to_string(*ex.k) : std::string()) + ")");
    }
    grad *= 2.0f / static_cast<float>(grad.size());
    net.backward(*tape, grad);
    clip_gradient_norm(net.gradients(), task.grad_clip);
    const double lr = task.lr.at(it);
    adam.step(net.parameters(), net.gradients(), lr);

    LossRecord rec{it, loss, lr, ex.k.value_or(0)};
    trace.push_back(rec);
    if (progress) progress(rec);
  }

  Model model{task.role, task.loss_mode, sched, std::move(net), task.iterations, task.k_range};
  return TrainResult{std::move(model), std::move(trace)};
}

void require_role(const TrainTask& task, std::initializer_list<ModelRole> allowed,
                  const char* fn) {
  for (ModelRole r : allowed) {
    if (task.role == r) return;
  }
  throw ParameterError(std::string(fn) + " cannot train role " + to_string(task.role));
}

void require_video(const VideoClip& video, std::size_t min_frames, const char* what) {
  video.validate();
  if (video.size() < min_frames) {
    throw ParameterError(std::string(what) + " needs at least " + std::to_string(min_frames) +
                         " frames, got " + std::to_string(video.size()));
  }
}

}  // namespace

TrainResult train_image_ddpm(const Tensor& image, const TrainTask& task,
                             const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                             RandomSource& rng, const ProgressFn& progress) {
  require_role(task, {ModelRole::image, ModelRole::projector}, "train_image_ddpm");
  const DenoiserConfig net_cfg = config_for_role(cfg, task.role, image.channels());
  const int min_size = net_cfg.min_input_size();
  RandomSource probe(0);
  sample_crop_window(image.shape(), task.crop, min_size, probe);
  return run_training(
      task, sched, net_cfg, rng,
      [&](long, RandomSource& r) {
        return Example{sample_crop(image, task.crop, r, min_size).first, {}, std::nullopt};
      },
      progress);
}

TrainResult train_projector(const VideoClip& video, const TrainTask& task,
                            const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                            RandomSource& rng, const ProgressFn& progress) {
  require_role(task, {ModelRole::projector}, "train_projector");
  require_video(video, 1, "projector training");
  const DenoiserConfig net_cfg =
      config_for_role(cfg, task.role, video.frame_shape().channels);
  const int min_size = net_cfg.min_input_size();
  const int last = static_cast<int>(video.size()) - 1;
  return run_training(
      task, sched, net_cfg, rng,
      [&](long, RandomSource& r) {
        const Tensor& frame = video[static_cast<std::size_t>(r.uniform_int(0, last))];
        return Example{sample_crop(frame, task.crop, r, min_size).first, {}, std::nullopt};
      },
      progress);
}

TrainResult train_predictor(const VideoClip& video, const TrainTask& task,
                            const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                            RandomSource& rng, const ProgressFn& progress) {
  require_role(task, {ModelRole::predictor}, "train_predictor");
  require_video(video, static_cast<std::size_t>(task.k_range) + 1, "predictor training");
  DenoiserConfig net_cfg = config_for_role(cfg, task.role, video.frame_shape().channels);
  net_cfg.max_frame_gap = std::max(net_cfg.max_frame_gap, task.k_range);
  const int min_size = net_cfg.min_input_size();
  const int frames = static_cast<int>(video.size());
  CurriculumState state{0, task.k_range, task.warmup_iterations(), task.k_only_pm1};
  return run_training(
      task, sched, net_cfg, rng,
      [&](long it, RandomSource& r) {
        state.iteration = it;
        const int k = curriculum_k(state, r);
        int n = r.uniform_int(0, frames - 1);
        while (n + k < 0 || n + k >= frames) n = r.uniform_int(0, frames - 1);
        const CropWindow w = sample_crop_window(video.frame_shape(), task.crop, min_size, r);
        const auto cut = [&](int i) {
          return video[static_cast<std::size_t>(i)].crop(w.y, w.x, w.height, w.width);
        };
        return Example{cut(n + k), {cut(n)}, k};
      },
      progress);
}

TrainResult train_interpolator(const VideoClip& video, const TrainTask& task,
                               const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                               RandomSource& rng, const ProgressFn& progress) {
  require_role(task, {ModelRole::interpolator}, "train_interpolator");
  require_video(video, 3, "interpolator training");
  const DenoiserConfig net_cfg =
      config_for_role(cfg, task.role, video.frame_shape().channels);
  const int min_size = net_cfg.min_input_size();
  const int last_start = static_cast<int>(video.size()) - 3;
  return run_training(
      task, sched, net_cfg, rng,
      [&](long, RandomSource& r) {
        const int n = r.uniform_int(0, last_start);
        const CropWindow w = sample_crop_window(video.frame_shape(), task.crop, min_size, r);
        const auto cut = [&](int i) {
          return video[static_cast<std::size_t>(i)].crop(w.y, w.x, w.height, w.width);
        };
        return Example{cut(n + 1), {cut(n), cut(n + 2)}, std::nullopt};
      },
      progress);
}

TrainResult train_model(const VideoClip& video, const TrainTask& task,
                        const DiffusionSchedule& sched, const DenoiserConfig& cfg,
                        RandomSource& rng, const ProgressFn& progress) {
  switch (task.role) {
    case ModelRole::image:
      if (video.empty()) throw ParameterError("image training needs one image");
      return train_image_ddpm(video[0], task, sched, cfg, rng, progress);
    case ModelRole::projector:
      return train_projector(video, task, sched, cfg, rng, progress);
    case ModelRole::predictor:
      return train_predictor(video, task, sched, cfg, rng, progress);
    case ModelRole::interpolator:
      return train_interpolator(video, task, sched, cfg, rng, progress);
  }
  throw ParameterError("unknown role");
}

DenoiseFn make_denoise_fn(const Model& model, std::vector<Tensor> cond, std::optional<int> k) {
  const int expected = model.net.config().conditioning_frames();
  if (static_cast<int>(cond.size()) != expected) {
    throw ParameterError(to_string(model.role) + " model expects " + std::to_string(expected) +
                         " conditioning frames, got " + std::to_string(cond.size()));
  }
  const Denoiser* net = &model.net;
  return [net, cond = std::move(cond), k](const Tensor& x_t, int t) {
    return denoise_forward(*net, x_t, cond, t, k);
  };
}

}  // namespace solodiff
