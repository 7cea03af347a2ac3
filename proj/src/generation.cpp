#include "solodiff/generation.hpp"

#include <algorithm>

#include "solodiff/error.hpp"

namespace solodiff {

std::string to_string(Direction d) { return d == Direction::forward ? "forward" : "backward"; }

Direction direction_from_string(const std::string& s) {
  if (s == "forward") return Direction::forward;
  if (s == "backward") return Direction::backward;
  throw ParameterError("unknown direction '" + s + "' (expected forward|backward)");
}

std::string to_string(FrameOrigin o) {
  switch (o) {
    case FrameOrigin::seeded:
      return "seeded";
    case FrameOrigin::projector_sampled:
      return "projector_sampled";
    case FrameOrigin::predicted:
      return "predicted";
    case FrameOrigin::predicted_corrected:
      return "predicted+corrected";
  }
  return "?";
}

namespace {

void require_unconditional(const Model& m, const char* what) {
  if (m.role != ModelRole::projector && m.role != ModelRole::image) {
    throw ParameterError(std::string(what) + " needs an unconditional (image or projector) model, got " +
                         to_string(m.role));
  }
}

void require_role(const Model& m, ModelRole role, const char* what) {
  if (m.role != role) {
    throw ParameterError(std::string(what) + " needs a " + to_string(role) + " model, got " +
                         to_string(m.role));
  }
}

void require_frame_fits(const Model& m, Shape shape, const char* what) {
  const DenoiserConfig& cfg = m.net.config();
  if (shape.channels != cfg.out_channels) {
    throw ParameterError(std::string(what) + " has " + std::to_string(shape.channels) +
                         " channels but the " + to_string(m.role) + " model produces " +
                         std::to_string(cfg.out_channels));
  }
  if (shape.height < cfg.min_input_size() || shape.width < cfg.min_input_size()) {
    throw ParameterError(std::string(what) + " " + shape.str() + " is below the network minimum " +
                         std::to_string(cfg.min_input_size()));
  }
}

Tensor correct(const Tensor& x, const Model& projector, int t_corr, RandomSource& rng,
               const SamplerOptions& opts) {
  return truncated_project(x, t_corr, make_denoise_fn(projector), projector.mode,
                           projector.schedule, rng, opts);
}

}  // namespace

Tensor generate_image(const Model& model, Shape shape, RandomSource& rng,
                      const SamplerOptions& opts) {
  require_unconditional(model, "generate_image");
  require_frame_fits(model, shape, "requested shape");
  return sample_loop(make_denoise_fn(model), shape, model.mode, model.schedule, rng, opts);
}

GeneratedVideo generate_video(const Model& predictor, const Model* projector,
                              const VideoGenSpec& spec, RandomSource& rng,
                              const SamplerOptions& opts) {
  require_role(predictor, ModelRole::predictor, "generate_video");
  if (spec.length < 1) throw ParameterError("video length must be >= 1");
  if (spec.t_corr < 0) throw ParameterError("t_corr must be >= 0");
  if (projector) {
    require_unconditional(*projector, "frame correction");
    if (spec.t_corr > projector->schedule.steps) {
      throw ParameterError("t_corr " + std::to_string(spec.t_corr) + " exceeds projector T=" +
                           std::to_string(projector->schedule.steps));
    }
  }
  const bool correcting = spec.t_corr > 0 && spec.length > 1;
  if (correcting && !projector) throw ParameterError("t_corr > 0 requires a projector model");

  GeneratedVideo out;
  if (spec.seed_frame) {
    require_frame_fits(predictor, spec.seed_frame->shape(), "seed frame");
    if (projector) require_frame_fits(*projector, spec.seed_frame->shape(), "seed frame");
    out.frames.push_back(*spec.seed_frame);
    out.provenance.push_back(FrameOrigin::seeded);
  } else {
    if (!projector) throw ParameterError("generating the first frame requires a projector model");
    require_frame_fits(predictor, spec.shape, "frame shape");
    out.frames.push_back(generate_image(*projector, spec.shape, rng, opts));
    out.provenance.push_back(FrameOrigin::projector_sampled);
  }

  const int k = spec.direction == Direction::forward ? 1 : -1;
  for (int m = 1; m < spec.length; ++m) {
    const Tensor& prev = out.frames.back();
    Tensor next = sample_loop(make_denoise_fn(predictor, {prev}, k), prev.shape(), predictor.mode,
                              predictor.schedule, rng, opts);
    if (correcting) {
      next = correct(next, *projector, spec.t_corr, rng, opts);
      out.provenance.push_back(FrameOrigin::predicted_corrected);
    } else {
      out.provenance.push_back(FrameOrigin::predicted);
    }
    out.frames.push_back(std::move(next));
  }
  return out;
}

GeneratedVideo extrapolate(const VideoClip& video, const Model& predictor, const Model* projector,
                           Direction direction, int count, RandomSource& rng, int t_corr,
                           const SamplerOptions& opts) {
  if (count < 0) throw ParameterError("extrapolation count must be >= 0");
  video.validate();
  if (video.empty()) throw ParameterError("cannot extrapolate an empty video");
  if (count == 0) return {};

  VideoGenSpec spec;
  spec.length = count + 1;
  spec.seed_frame = direction == Direction::forward ? video.frames.back() : video.frames.front();
  spec.direction = direction;
  spec.t_corr = t_corr;
  GeneratedVideo full = generate_video(predictor, projector, spec, rng, opts);

  GeneratedVideo out;
  out.frames.assign(std::make_move_iterator(full.frames.begin() + 1),
                    std::make_move_iterator(full.frames.end()));
  out.provenance.assign(full.provenance.begin() + 1, full.provenance.end());
  if (direction == Direction::backward) {
    std::reverse(out.frames.begin(), out.frames.end());
    std::reverse(out.provenance.begin(), out.provenance.end());
  }
  return out;
}

VideoClip upsample_temporal(const VideoClip& video, const Model& interpolator,
                            const Model* projector, RandomSource& rng, int t_corr,
                            const SamplerOptions& opts) {
  require_role(interpolator, ModelRole::interpolator, "upsample_temporal");
  video.validate();
  if (video.size() < 2) {
    throw ParameterError("temporal upsampling needs at least 2 frames, got " +
                         std::to_string(video.size()));
  }
  if (t_corr < 0) throw ParameterError("t_corr must be >= 0");
  if (t_corr > 0) {
    if (!projector) throw ParameterError("t_corr > 0 requires a projector model");
    require_unconditional(*projector, "frame correction");
  }
  require_frame_fits(interpolator, video.frame_shape(), "video frame");

  VideoClip out;
  for (std::size_t i = 0; i < video.size(); ++i) {
    out.frames.push_back(video[i]);
    out.indices.push_back(static_cast<int>(2 * i));
    if (i + 1 == video.size()) break;
    Tensor mid = sample_loop(make_denoise_fn(interpolator, {video[i], video[i + 1]}),
                             video.frame_shape(), interpolator.mode, interpolator.schedule, rng,
                             opts);
    if (t_corr > 0) mid = correct(mid, *projector, t_corr, rng, opts);
    out.frames.push_back(std::move(mid));
    out.indices.push_back(static_cast<int>(2 * i + 1));
  }
  return out;
}

Tensor refine_image(const Tensor& image, const Model& model, int t_start, RandomSource& rng,
                    const SamplerOptions& opts) {
  require_unconditional(model, "refine_image");
  require_frame_fits(model, image.shape(), "input image");
  return truncated_project(image, t_start, make_denoise_fn(model), model.mode, model.schedule, rng,
                           opts);
}

}  // namespace solodiff
