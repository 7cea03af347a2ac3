#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "solodiff/nnf.hpp"
#include "solodiff/tensor.hpp"

namespace solodiff::testing {

/// White square of side `side` on black, moving `step` px/frame to the right
/// with horizontal wrap-around, top edge at row `top`.
inline VideoClip moving_square(int frames, int size = 64, int side = 16, int step = 2,
                               int top = 24) {
  std::vector<Tensor> out;
  for (int f = 0; f < frames; ++f) {
    Tensor t(3, size, size, -1.0f);
    for (int y = top; y < top + side; ++y) {
      for (int i = 0; i < side; ++i) {
        const int x = ((f * step + i) % size + size) % size;
        for (int c = 0; c < 3; ++c) t.at(c, y, x) = 1.0f;
      }
    }
    out.push_back(std::move(t));
  }
  return VideoClip(std::move(out));
}

/// PSNR of "next frame = current frame" on moving_square: 2*step*side pixels
/// flip between -1 and +1 each frame.
inline double moving_square_copy_psnr(int size = 64, int side = 16, int step = 2) {
  return 10.0 * std::log10(static_cast<double>(size) * size / (2.0 * step * side));
}

/// Deterministic piecewise-smooth RGB test picture: sky gradient, a wavy
/// horizon, a sun and a few dark tree crowns.
inline Tensor landscape(int height = 64, int width = 64) {
  Tensor t(3, height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = static_cast<double>(x) / width;
      const double v = static_cast<double>(y) / height;
      const double horizon = 0.55 + 0.08 * std::sin(6.0 * u) + 0.04 * std::sin(17.0 * u + 1.0);
      std::array<double, 3> rgb;
      if (v < horizon) {
        rgb = {0.2 + 0.5 * v, 0.45 + 0.4 * v, 0.95 - 0.2 * v};
        const double dx = u - 0.75, dy = v - 0.2;
        if (dx * dx + dy * dy < 0.008) rgb = {1.0, 0.9, 0.35};
      } else {
        const double g = 0.35 + 0.25 * std::sin(40.0 * u) * std::sin(25.0 * v);
        rgb = {0.15 + 0.2 * v, g, 0.1};
      }
      for (const auto& [cx, cy] : {std::pair{0.15, 0.52}, {0.3, 0.58}, {0.55, 0.5}}) {
        const double dx = u - cx, dy = (v - cy) * 1.3;
        if (dx * dx + dy * dy < 0.004) rgb = {0.05, 0.25 + 0.3 * (cy - v), 0.08};
      }
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<float>(2.0 * rgb[c] - 1.0);
    }
  }
  return t;
}

/// Frames of uniform noise quantized to `levels` values, so equal patches
/// and distance ties occur.
inline VideoClip quantized_noise_video(int frames, int height, int width, int channels,
                                       int levels, std::mt19937_64& gen) {
  std::uniform_int_distribution<int> pick(0, levels - 1);
  std::vector<Tensor> out;
  for (int f = 0; f < frames; ++f) {
    Tensor t(channels, height, width);
    for (float& v : t.data()) {
      v = levels == 1 ? 0.0f : -1.0f + 2.0f * static_cast<float>(pick(gen)) / (levels - 1);
    }
    out.push_back(std::move(t));
  }
  return VideoClip(std::move(out));
}

/// Exhaustive nearest-neighbour field: every generated patch against every
/// reference patch, keeping the first strict minimum in (t, y, x) order.
inline NNField brute_force_nnf(const VideoClip& gen, const VideoClip& ref) {
  const int C = gen.frame_shape().channels;
  const int gf = static_cast<int>(gen.size()), gh = gen.frame_shape().height,
            gw = gen.frame_shape().width;
  const int rf = static_cast<int>(ref.size()), rh = ref.frame_shape().height,
            rw = ref.frame_shape().width;
  NNField field;
  field.frames = gf - 2;
  field.height = gh - 2;
  field.width = gw - 2;
  for (int t = 1; t < gf - 1; ++t) {
    for (int y = 1; y < gh - 1; ++y) {
      for (int x = 1; x < gw - 1; ++x) {
        double best = INFINITY;
        std::array<int, 3> arg{};
        for (int s = 1; s < rf - 1; ++s) {
          for (int q = 1; q < rh - 1; ++q) {
            for (int p = 1; p < rw - 1; ++p) {
              double ssd = 0.0;
              for (int c = 0; c < C; ++c) {
                for (int a = -1; a <= 1; ++a) {
                  for (int b = -1; b <= 1; ++b) {
                    for (int e = -1; e <= 1; ++e) {
                      const double d = static_cast<double>(gen[t + a].at(c, y + b, x + e)) -
                                       ref[s + a].at(c, q + b, p + e);
                      ssd += d * d;
                    }
                  }
                }
              }
              if (ssd < best) {
                best = ssd;
                arg = {s - t, q - y, p - x};
              }
            }
          }
        }
        field.offsets.push_back(arg);
        field.distances.push_back(best / (27.0 * C));
      }
    }
  }
  return field;
}

}  // namespace solodiff::testing
