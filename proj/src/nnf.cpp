#include "solodiff/nnf.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <string_view>
#include <unordered_map>

#include "solodiff/error.hpp"

namespace solodiff {

void NNField::validate() const {
  if (frames < 1 || height < 1 || width < 1) throw ParameterError("empty nearest-neighbour field");
  if (offsets.size() != voxel_count()) throw ParameterError("NNF offsets do not cover the field");
  if (!distances.empty() && distances.size() != voxel_count()) {
    throw ParameterError("NNF distances do not cover the field");
  }
}

namespace {

struct PatchSet {
  int frames = 0, height = 0, width = 0;  // centre grid extent
  int length = 0;                         // floats per patch
  std::vector<float> data;

  const float* patch(std::size_t i) const { return data.data() + i * static_cast<std::size_t>(length); }
};

void check_video(const VideoClip& v, const char* what) {
  v.validate();
  const Shape s = v.empty() ? Shape{} : v.frame_shape();
  if (v.size() < 3 || s.height < 3 || s.width < 3) {
    throw ParameterError(std::string(what) + " must have >= 3 frames of at least 3x3 pixels");
  }
}

// Every 3x3x3 patch fully inside `v`, centres in (t, y, x) raster order; each
// patch is flattened as (channel, dt, dy, dx).
PatchSet extract_patches(const VideoClip& v) {
  const Shape s = v.frame_shape();
  PatchSet p;
  p.frames = static_cast<int>(v.size()) - 2;
  p.height = s.height - 2;
  p.width = s.width - 2;
  p.length = 27 * s.channels;
  p.data.resize(static_cast<std::size_t>(p.frames) * p.height * p.width * p.length);
  float* out = p.data.data();
  for (int t = 0; t < p.frames; ++t) {
    for (int y = 0; y < p.height; ++y) {
      for (int x = 0; x < p.width; ++x) {
        for (int c = 0; c < s.channels; ++c) {
          for (int dt = 0; dt < 3; ++dt) {
            const Tensor& f = v[static_cast<std::size_t>(t + dt)];
            for (int dy = 0; dy < 3; ++dy) {
              for (int dx = 0; dx < 3; ++dx) *out++ = f.at(c, y + dy, x + dx);
            }
          }
        }
      }
    }
  }
  return p;
}

struct Candidate {
  std::size_t patch;  // index into the reference PatchSet
  int t, y, x;        // reference field coordinate
};

// Reference patches with byte-identical duplicates removed; the survivor of
// each duplicate group is the first in raster order, i.e. the smallest.
std::vector<Candidate> unique_patches(const PatchSet& ref) {
  const std::size_t bytes = static_cast<std::size_t>(ref.length) * sizeof(float);
  std::unordered_map<std::string_view, std::size_t> seen;
  std::vector<Candidate> out;
  std::size_t i = 0;
  for (int t = 0; t < ref.frames; ++t) {
    for (int y = 0; y < ref.height; ++y) {
      for (int x = 0; x < ref.width; ++x, ++i) {
        std::string_view key(reinterpret_cast<const char*>(ref.patch(i)), bytes);
        if (seen.emplace(key, i).second) out.push_back({i, t, y, x});
      }
    }
  }
  return out;
}

}  // namespace

NNField compute_nnf(const VideoClip& generated, const VideoClip& reference) {
  check_video(generated, "generated video");
  check_video(reference, "reference video");
  if (generated.frame_shape().channels != reference.frame_shape().channels) {
    throw ParameterError("generated and reference videos differ in channel count");
  }
  const PatchSet gen = extract_patches(generated);
  const PatchSet ref = extract_patches(reference);
  const std::vector<Candidate> cands = unique_patches(ref);
  const int len = gen.length;
  const int chunk = 27;

  NNField field;
  field.frames = gen.frames;
  field.height = gen.height;
  field.width = gen.width;
  field.offsets.resize(field.voxel_count());
  field.distances.resize(field.voxel_count());

  std::size_t g = 0;
  for (int t = 0; t < gen.frames; ++t) {
    for (int y = 0; y < gen.height; ++y) {
      for (int x = 0; x < gen.width; ++x, ++g) {
        const float* a = gen.patch(g);
        double best = std::numeric_limits<double>::infinity();
        const Candidate* arg = nullptr;
        for (const Candidate& c : cands) {
          const float* b = ref.patch(c.patch);
          double ssd = 0.0;
          bool pruned = false;
          for (int i = 0; i < len; i += chunk) {
            for (int j = i; j < i + chunk; ++j) {
              const double d = static_cast<double>(a[j]) - static_cast<double>(b[j]);
              ssd += d * d;
            }
            // Partial sums only grow, so a candidate already at `best` cannot win.
            if (ssd >= best) {
              pruned = true;
              break;
            }
          }
          if (pruned) continue;
          best = ssd;
          arg = &c;
          if (best == 0.0) break;
        }
        field.offsets[g] = {arg->t - t, arg->y - y, arg->x - x};
        field.distances[g] = best / len;
      }
    }
  }
  return field;
}

std::vector<std::uint8_t> nnf_serialize(const NNField& field) {
  field.validate();
  std::vector<std::uint8_t> out;
  out.reserve(field.voxel_count() * 6);
  for (const auto& o : field.offsets) {
    for (int v : o) {
      if (v < std::numeric_limits<std::int16_t>::min() ||
          v > std::numeric_limits<std::int16_t>::max()) {
        throw FormatError("NNF offset " + std::to_string(v) + " does not fit in 16 bits");
      }
      const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(v));
      out.push_back(static_cast<std::uint8_t>(u & 0xFF));
      out.push_back(static_cast<std::uint8_t>(u >> 8));
    }
  }
  return out;
}

NNField nnf_deserialize(std::span<const std::uint8_t> bytes, int frames, int height, int width) {
  NNField f;
  f.frames = frames;
  f.height = height;
  f.width = width;
  if (frames < 1 || height < 1 || width < 1 || bytes.size() != f.voxel_count() * 6) {
    throw FormatError("serialized NNF has " + std::to_string(bytes.size()) +
                      " bytes, expected 6 per voxel of a " + std::to_string(frames) + "x" +
                      std::to_string(height) + "x" + std::to_string(width) + " field");
  }
  f.offsets.resize(f.voxel_count());
  f.distances.assign(f.voxel_count(), 0.0);
  for (std::size_t i = 0; i < f.voxel_count(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const std::size_t p = i * 6 + static_cast<std::size_t>(a) * 2;
      const auto u = static_cast<std::uint16_t>(bytes[p] | (bytes[p + 1] << 8));
      f.offsets[i][static_cast<std::size_t>(a)] = static_cast<std::int16_t>(u);
    }
  }
  return f;
}

double nnfdiv(const NNField& field) {
  const std::vector<std::uint8_t> raw = nnf_serialize(field);
  uLongf size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<Bytef> packed(size);
  const int rc = compress2(packed.data(), &size, raw.data(), static_cast<uLong>(raw.size()),
                           Z_DEFAULT_COMPRESSION);
  if (rc != Z_OK) throw FormatError("zlib compression failed (code " + std::to_string(rc) + ")");
  const double ratio = static_cast<double>(size) / static_cast<double>(raw.size());
  return std::clamp(ratio, 0.0, 1.0);
}

double nnfdist(const NNField& field) {
  field.validate();
  if (field.distances.empty()) throw ParameterError("NNF carries no distances");
  double sum = 0.0;
  for (double d : field.distances) sum += d;
  return sum / static_cast<double>(field.distances.size());
}

std::array<float, 3> offset_color(double dy, double dx, double max_magnitude) {
  const double mag = std::hypot(dy, dx);
  if (max_magnitude <= 0.0 || mag == 0.0) return {1.0f, 1.0f, 1.0f};
  const double sat = std::min(1.0, mag / max_magnitude);
  double hue = std::atan2(dy, dx) / (2.0 * std::numbers::pi);
  if (hue < 0.0) hue += 1.0;
  // HSV with V = 1.
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = 1.0 - sat;
  const double q = 1.0 - sat * f;
  const double r = 1.0 - sat * (1.0 - f);
  double rgb[3];
  switch (sector) {
    case 0: rgb[0] = 1; rgb[1] = r; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = 1; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = 1; rgb[2] = r; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = 1; break;
    case 4: rgb[0] = r; rgb[1] = p; rgb[2] = 1; break;
    default: rgb[0] = 1; rgb[1] = p; rgb[2] = q; break;
  }
  return {static_cast<float>(2 * rgb[0] - 1), static_cast<float>(2 * rgb[1] - 1),
          static_cast<float>(2 * rgb[2] - 1)};
}

NNFColormap nnf_colormap(const NNField& field) {
  field.validate();
  double max_mag = 0.0;
  int max_dt = 0;
  for (const auto& o : field.offsets) {
    max_mag = std::max(max_mag, std::hypot(static_cast<double>(o[1]), static_cast<double>(o[2])));
    max_dt = std::max(max_dt, std::abs(o[0]));
  }
  NNFColormap out;
  for (int t = 0; t < field.frames; ++t) {
    Tensor rgb(3, field.height, field.width);
    Tensor gray(1, field.height, field.width);
    for (int y = 0; y < field.height; ++y) {
      for (int x = 0; x < field.width; ++x) {
        const auto& o = field.offsets[field.index(t, y, x)];
        const auto c = offset_color(o[1], o[2], max_mag);
        for (int ch = 0; ch < 3; ++ch) rgb.at(ch, y, x) = c[static_cast<std::size_t>(ch)];
        gray.at(0, y, x) = max_dt > 0 ? static_cast<float>(o[0]) / static_cast<float>(max_dt) : 0.0f;
      }
    }
    out.spatial.push_back(std::move(rgb));
    out.temporal.push_back(std::move(gray));
  }
  return out;
}

}  // namespace solodiff
