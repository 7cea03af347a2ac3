#include "solodiff/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <regex>
#include <vector>

#include "solodiff/error.hpp"

namespace fs = std::filesystem;

namespace solodiff {

float byte_to_unit(unsigned char v) { return static_cast<float>(v) / 127.5f - 1.0f; }

unsigned char unit_to_byte(float v) {
  const float s = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
  return static_cast<unsigned char>(std::clamp(s, 0.0f, 255.0f));
}

std::string frame_filename(int one_based_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.png", one_based_index);
  return buf;
}

Tensor fit_to_max_side(const Tensor& image, int max_side) {
  const int h = image.height();
  const int w = image.width();
  const int side = std::max(h, w);
  if (max_side <= 0 || side <= max_side) return image;
  const double scale = static_cast<double>(max_side) / side;
  const int oh = std::max(1, static_cast<int>(std::lround(h * scale)));
  const int ow = std::max(1, static_cast<int>(std::lround(w * scale)));
  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;

  // Per-axis overlap weights of each output cell with the input pixels.
  struct Span {
    int first;
    std::vector<double> weights;
  };
  const auto spans = [](int out, double step, int limit) {
    std::vector<Span> s(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      const double a = o * step;
      const double b = std::min<double>((o + 1) * step, limit);
      const int first = static_cast<int>(std::floor(a));
      const int last = std::min(limit - 1, static_cast<int>(std::ceil(b)) - 1);
      Span& sp = s[static_cast<std::size_t>(o)];
      sp.first = first;
      for (int i = first; i <= last; ++i) {
        sp.weights.push_back((std::min<double>(b, i + 1) - std::max<double>(a, i)) / (b - a));
      }
    }
    return s;
  };
  const auto ys = spans(oh, sy, h);
  const auto xs = spans(ow, sx, w);

  Tensor out(image.channels(), oh, ow);
  for (int c = 0; c < image.channels(); ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      const Span& spy = ys[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < ow; ++ox) {
        const Span& spx = xs[static_cast<std::size_t>(ox)];
        double acc = 0.0;
        for (std::size_t i = 0; i < spy.weights.size(); ++i) {
          for (std::size_t j = 0; j < spx.weights.size(); ++j) {
            acc += spy.weights[i] * spx.weights[j] *
                   image.at(c, spy.first + static_cast<int>(i), spx.first + static_cast<int>(j));
          }
        }
        out.at(c, oy, ox) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Tensor load_image(const std::string& path, int max_side) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw InputError("cannot read PNG '" + path + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw InputError("cannot decode PNG '" + path + "': " + img.message);
  }
  const int h = static_cast<int>(img.height);
  const int w = static_cast<int>(img.width);
  Tensor t(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = (static_cast<std::size_t>(y) * w + x) * 3;
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = byte_to_unit(buf[p + static_cast<std::size_t>(c)]);
    }
  }
  return fit_to_max_side(t, max_side);
}

void save_image(const Tensor& image, const std::string& path) {
  if (image.empty()) throw ParameterError("cannot save an empty image to '" + path + "'");
  if (image.channels() != 1 && image.channels() != 3) {
    throw ParameterError("PNG output needs 1 or 3 channels, got " +
                         std::to_string(image.channels()));
  }
  const int h = image.height();
  const int w = image.width();
  const int ch = image.channels();
  std::vector<png_byte> buf(static_cast<std::size_t>(h) * w * ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        buf[(static_cast<std::size_t>(y) * w + x) * ch + c] = unit_to_byte(image.at(c, y, x));
      }
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = ch == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path + "': " + img.message);
  }
}

namespace {

VideoClip load_frame_directory(const fs::path& dir, int max_side) {
  static const std::regex pattern(R"(frame_(\d{6})\.png)");
  std::map<int, fs::path> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    std::smatch m;
    if (std::regex_match(name, m, pattern)) found[std::stoi(m[1].str())] = entry.path();
  }
  if (found.empty()) {
    throw InputError("no frame_NNNNNN.png files in '" + dir.string() + "'");
  }
  int expected = 1;
  for (const auto& [index, p] : found) {
    if (index != expected) {
      throw InputError("frame numbering gap in '" + dir.string() + "': missing " +
                       frame_filename(expected) + " (next present is " +
                       p.filename().string() + ")");
    }
    ++expected;
  }

  VideoClip clip;
  for (const auto& [index, p] : found) {
    Tensor frame = load_image(p.string(), max_side);
    if (!clip.empty() && frame.shape() != clip.frames.front().shape()) {
      throw InputError("frame '" + p.filename().string() + "' is " + frame.shape().str() +
                       " but earlier frames are " + clip.frames.front().shape().str());
    }
    clip.frames.push_back(std::move(frame));
    clip.indices.push_back(index - 1);
  }
  return clip;
}

bool have_ffmpeg() { return std::system("command -v ffmpeg >/dev/null 2>&1") == 0; }

VideoClip decode_container(const fs::path& file, int max_side) {
  if (!have_ffmpeg()) {
    throw InputError("'" + file.string() +
                     "' is not a PNG or frame directory and no ffmpeg binary is available to "
                     "decode it");
  }
  const fs::path tmp = fs::temp_directory_path() /
                       ("solodiff_decode_" + std::to_string(std::hash<std::string>{}(file.string())));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  const std::string cmd = "ffmpeg -loglevel error -y -i \"" + file.string() + "\" \"" +
                          (tmp / "frame_%06d.png").string() + "\"";
  if (std::system(cmd.c_str()) != 0) {
    fs::remove_all(tmp);
    throw InputError("ffmpeg failed to decode '" + file.string() + "'");
  }
  VideoClip clip = load_frame_directory(tmp, max_side);
  fs::remove_all(tmp);
  return clip;
}

}  // namespace

VideoClip load_video_frames(const std::string& path, int max_side) {
  const fs::path p(path);
  if (!fs::exists(p)) throw InputError("input '" + path + "' does not exist");
  if (fs::is_directory(p)) return load_frame_directory(p, max_side);
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return VideoClip({load_image(path, max_side)});
  return decode_container(p, max_side);
}

void save_video_frames(std::span<const Tensor> frames, const std::string& dir) {
  if (frames.empty()) throw ParameterError("cannot save an empty clip to '" + dir + "'");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    save_image(frames[i], (fs::path(dir) / frame_filename(static_cast<int>(i) + 1)).string());
  }
}

}  // namespace solodiff
