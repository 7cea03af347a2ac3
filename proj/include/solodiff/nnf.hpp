#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "solodiff/tensor.hpp"

namespace solodiff {

/// Nearest-neighbour field between two videos over 3x3x3 space-time patches.
///
/// The field has one voxel per valid patch centre of the generated video, so
/// its extent is (frames-2) x (height-2) x (width-2); voxel (t, y, x) is the
/// patch centred at generated frame t+1, row y+1, column x+1. Each offset is
/// {dt, dy, dx} = matched reference centre minus generated centre, and the
/// distance is the patch mean squared error over 27 * channels values.
struct NNField {
  static constexpr int kPatch = 3;

  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::array<int, 3>> offsets;
  std::vector<double> distances;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(frames) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t index(int t, int y, int x) const {
    return (static_cast<std::size_t>(t) * height + y) * width + x;
  }
  void validate() const;
};

/// Exact nearest neighbour of every generated patch among all reference
/// patches fully inside the reference video. Ties go to the lexicographically
/// smallest reference centre (t, y, x).
NNField compute_nnf(const VideoClip& generated, const VideoClip& reference);

/// Headerless little-endian int16 triples (dt, dy, dx) in (t, y, x) order.
std::vector<std::uint8_t> nnf_serialize(const NNField& field);
/// Inverse of nnf_serialize for a field of the given extent (distances zero).
NNField nnf_deserialize(std::span<const std::uint8_t> bytes, int frames, int height, int width);

/// DEFLATE (default level) size of the serialized offsets over their raw
/// size, clipped to [0, 1].
double nnfdiv(const NNField& field);

/// Mean patch distance over the field.
double nnfdist(const NNField& field);

struct NNFColormap {
  /// RGB per field frame: hue is the (dy, dx) angle, saturation the magnitude
  /// over the field's largest magnitude; zero offset is white.
  std::vector<Tensor> spatial;
  /// Grayscale per field frame: dt scaled by the largest |dt| (0 is mid-gray).
  std::vector<Tensor> temporal;
};

NNFColormap nnf_colormap(const NNField& field);

/// RGB in [-1, 1] for an offset on the colour wheel; `max_magnitude` <= 0
/// renders every offset white.
std::array<float, 3> offset_color(double dy, double dx, double max_magnitude);

}  // namespace solodiff
