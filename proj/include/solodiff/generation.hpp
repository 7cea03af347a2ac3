#pragma once

#include <optional>
#include <string>
#include <vector>

#include "solodiff/diffusion.hpp"
#include "solodiff/random.hpp"
#include "solodiff/tensor.hpp"
#include "solodiff/trainer.hpp"

namespace solodiff {

enum class Direction { forward, backward };

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

/// How a generated frame came to be.
enum class FrameOrigin {
  seeded,              ///< copied from the caller's seed frame
  projector_sampled,   ///< full unconditional sample from the projector
  predicted,           ///< predictor sample, correction disabled
  predicted_corrected  ///< predictor sample followed by truncated projection
};

std::string to_string(FrameOrigin o);

struct VideoGenSpec {
  int length = 1;
  std::optional<Tensor> seed_frame;
  /// Frame shape when no seed frame is given.
  Shape shape{};
  Direction direction = Direction::forward;
  /// Projection depth applied to each predicted frame; 0 disables correction.
  int t_corr = 3;
};

struct GeneratedVideo {
  std::vector<Tensor> frames;
  std::vector<FrameOrigin> provenance;
};

/// Full reverse process from Gaussian noise of `shape`.
Tensor generate_image(const Model& model, Shape shape, RandomSource& rng,
                      const SamplerOptions& opts = {});

/// Autoregressive generation: each new frame is sampled from the predictor
/// conditioned on the previous frame (k = +1 forward, -1 backward) and then
/// projected t_corr steps through the projector. Frames are returned in
/// generation order. `projector` may be null only when t_corr == 0 and a seed
/// frame is given.
GeneratedVideo generate_video(const Model& predictor, const Model* projector,
                              const VideoGenSpec& spec, RandomSource& rng,
                              const SamplerOptions& opts = {});

/// Continues `video` past its last frame (forward) or before its first frame
/// (backward). Returns only the `count` new frames, in chronological order.
GeneratedVideo extrapolate(const VideoClip& video, const Model& predictor, const Model* projector,
                           Direction direction, int count, RandomSource& rng, int t_corr = 3,
                           const SamplerOptions& opts = {});

/// Doubles the frame rate: output frame 2i is input frame i, output frame
/// 2i+1 is sampled from the interpolator between input frames i and i+1 and
/// projected t_corr steps (0 disables the projection).
VideoClip upsample_temporal(const VideoClip& video, const Model& interpolator,
                            const Model* projector, RandomSource& rng, int t_corr = 3,
                            const SamplerOptions& opts = {});

/// Noises `image` to step t_start and denoises it back with an unconditional
/// model (editing / sketch refinement).
Tensor refine_image(const Tensor& image, const Model& model, int t_start, RandomSource& rng,
                    const SamplerOptions& opts = {});

}  // namespace solodiff
