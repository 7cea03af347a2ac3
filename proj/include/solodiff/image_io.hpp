#pragma once

#include <span>
#include <string>

#include "solodiff/tensor.hpp"

namespace solodiff {

/// Default cap on the long side of loaded media.
inline constexpr int kDefaultMaxSide = 256;

/// 8-bit value -> [-1, 1] and back (rounded, clamped).
float byte_to_unit(unsigned char v);
unsigned char unit_to_byte(float v);

/// frame_000001.png for index 1.
std::string frame_filename(int one_based_index);

/// Area-averaging downscale so the long side is at most `max_side`
/// (0 disables the cap). Returns the input unchanged if already small enough.
Tensor fit_to_max_side(const Tensor& image, int max_side);

/// Reads an 8/16-bit gray, RGB or RGBA PNG as a 3-channel tensor.
Tensor load_image(const std::string& path, int max_side = kDefaultMaxSide);

/// Writes a 1- or 3-channel tensor as an 8-bit PNG.
void save_image(const Tensor& image, const std::string& path);

/// Loads frame_NNNNNN.png files from a directory (1-based, no gaps), a single
/// PNG as a one-frame clip, or a container video when an ffmpeg binary is on
/// PATH.
VideoClip load_video_frames(const std::string& path, int max_side = kDefaultMaxSide);

/// Writes frames as frame_000001.png ... into `dir`, creating it.
void save_video_frames(std::span<const Tensor> frames, const std::string& dir);
inline void save_video_frames(const VideoClip& clip, const std::string& dir) {
  save_video_frames(std::span<const Tensor>(clip.frames), dir);
}

}  // namespace solodiff
