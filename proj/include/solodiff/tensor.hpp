#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace solodiff {

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Channel-major (C, H, W) float image. Pixel values live in the normalized
/// range [-1, 1] throughout the library; I/O converts at the boundary.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(int channels, int height, int width, float fill = 0.0f)
      : Tensor(Shape{channels, height, width}, fill) {}
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* plane(int c) { return data_.data() + static_cast<std::size_t>(c) * shape_.plane(); }
  const float* plane(int c) const {
    return data_.data() + static_cast<std::size_t>(c) * shape_.plane();
  }

  /// Sub-window [y0, y0+h) x [x0, x0+w) of every channel.
  Tensor crop(int y0, int x0, int h, int w) const;

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape shape_{};
  std::vector<float> data_;
};

/// Stacks tensors of equal spatial size along the channel axis.
Tensor concat_channels(std::span<const Tensor> parts);

/// Throws ParameterError naming `what` when the shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// An ordered sequence of equally shaped frames. `indices` holds the source
/// frame index of every frame (0-based) so subsampled clips remember where
/// they came from.
struct VideoClip {
  std::vector<Tensor> frames;
  std::vector<int> indices;

  VideoClip() = default;
  explicit VideoClip(std::vector<Tensor> f);
  VideoClip(std::vector<Tensor> f, std::vector<int> idx);

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  const Tensor& operator[](std::size_t i) const { return frames[i]; }
  Tensor& operator[](std::size_t i) { return frames[i]; }
  Shape frame_shape() const;

  /// Throws ParameterError if frames disagree in shape or indices mismatch.
  void validate() const;
};

}  // namespace solodiff
