#include "solodiff/tensor.hpp"

#include <algorithm>
#include <numeric>

#include "solodiff/error.hpp"

namespace solodiff {

std::string Shape::str() const {
  return "(" + std::to_string(channels) + ", " + std::to_string(height) + ", " +
         std::to_string(width) + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.size(), fill) {
  if (shape.channels < 0 || shape.height < 0 || shape.width < 0) {
    throw ParameterError("negative tensor dimension " + shape.str());
  }
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ParameterError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
  }
}

Tensor Tensor::crop(int y0, int x0, int h, int w) const {
  if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > height() || x0 + w > width()) {
    throw ParameterError("crop window out of bounds for shape " + shape_.str());
  }
  Tensor out(channels(), h, w);
  for (int c = 0; c < channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      const float* src = &data_[index(c, y0 + y, x0)];
      std::copy(src, src + w, &out.at(c, y, 0));
    }
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ParameterError("concat_channels needs at least one tensor");
  const int h = parts[0].height();
  const int w = parts[0].width();
  int channels = 0;
  for (const Tensor& p : parts) {
    if (p.height() != h || p.width() != w) {
      throw ParameterError("concat_channels spatial mismatch: " + parts[0].shape().str() +
                           " vs " + p.shape().str());
    }
    channels += p.channels();
  }
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(channels) * h * w);
  for (const Tensor& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor(Shape{channels, h, w}, std::move(data));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ParameterError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
}

VideoClip::VideoClip(std::vector<Tensor> f) : frames(std::move(f)), indices(frames.size()) {
  std::iota(indices.begin(), indices.end(), 0);
}

VideoClip::VideoClip(std::vector<Tensor> f, std::vector<int> idx)
    : frames(std::move(f)), indices(std::move(idx)) {
  validate();
}

Shape VideoClip::frame_shape() const {
  if (frames.empty()) throw ParameterError("empty video clip has no frame shape");
  return frames.front().shape();
}

void VideoClip::validate() const {
  if (indices.size() != frames.size()) {
    throw ParameterError("video clip has " + std::to_string(frames.size()) + " frames but " +
                         std::to_string(indices.size()) + " indices");
  }
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].shape() != frames[0].shape()) {
      throw ParameterError("video frame " + std::to_string(i) + " has shape " +
                           frames[i].shape().str() + ", expected " + frames[0].shape().str());
    }
  }
}

}  // namespace solodiff
