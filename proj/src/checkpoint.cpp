#include "solodiff/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "solodiff/error.hpp"

namespace fs = std::filesystem;

namespace solodiff {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'W', 'E', 'I', 'G', 'H', '1'};

static_assert(std::endian::native == std::endian::little, "weights blob assumes little-endian");

nlohmann::json net_to_json(const DenoiserConfig& c) {
  return {{"depth", c.depth},
          {"width", c.width},
          {"in_channels", c.in_channels},
          {"out_channels", c.out_channels},
          {"embed_dim", c.embed_dim},
          {"uses_frame_gap", c.uses_frame_gap},
          {"block_kind", to_string(c.block_kind)},
          {"with_attention", c.with_attention},
          {"with_resampling", c.with_resampling},
          {"spatial_kernel", c.spatial_kernel},
          {"stem_kernel", c.stem_kernel},
          {"expansion", c.expansion},
          {"max_frame_gap", c.max_frame_gap}};
}

DenoiserConfig net_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.depth = j.at("depth").get<int>();
  c.width = j.at("width").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.uses_frame_gap = j.at("uses_frame_gap").get<bool>();
  c.block_kind = block_kind_from_string(j.at("block_kind").get<std::string>());
  c.with_attention = j.at("with_attention").get<bool>();
  c.with_resampling = j.at("with_resampling").get<bool>();
  c.spatial_kernel = j.at("spatial_kernel").get<int>();
  c.stem_kernel = j.at("stem_kernel").get<int>();
  c.expansion = j.at("expansion").get<int>();
  c.max_frame_gap = j.at("max_frame_gap").get<int>();
  return c;
}

}  // namespace

std::uint32_t crc32_of(std::span<const float> values) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* bytes = reinterpret_cast<const Bytef*>(values.data());
  std::size_t left = values.size() * sizeof(float);
  while (left > 0) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, bytes, n);
    bytes += n;
    left -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_json_atomic(const std::string& path, const nlohmann::json& j) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path + "': " + ec.message());
}

void save_checkpoint(const Model& model, const std::string& dir, const CheckpointInfo& info) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + dir + "': " + ec.message());
  const std::span<const float> params = model.net.parameters();

  const fs::path blob = fs::path(dir) / "weights.bin";
  {
    std::ofstream out(blob, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + blob.string() + "'");
    const std::uint64_t count = params.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(params.data()),
              static_cast<std::streamsize>(params.size() * sizeof(float)));
    if (!out) throw IoError("short write to '" + blob.string() + "'");
  }

  const DiffusionSchedule& s = model.schedule;
  nlohmann::json manifest = {
      {"format", "solodiff-checkpoint/1"},
      {"version", kVersionTag},
      {"role", to_string(model.role)},
      {"prediction", to_string(model.mode)},
      {"iterations", model.iterations},
      {"k_range", model.k_range},
      {"network", net_to_json(model.net.config())},
      {"schedule",
       {{"kind", to_string(s.kind)},
        {"steps", s.steps},
        {"beta_start", s.beta_start},
        {"beta_end", s.beta_end}}},
      {"source_shape",
       {{"channels", info.source_shape.channels},
        {"height", info.source_shape.height},
        {"width", info.source_shape.width}}},
      {"parameter_count", params.size()},
      {"weights", "weights.bin"},
      {"weights_crc32", crc32_of(params)},
      {"config", info.config},
  };
  write_json_atomic((fs::path(dir) / "manifest.json").string(), manifest);
}

LoadedCheckpoint load_checkpoint(const std::string& dir, std::optional<ModelRole> expected_role) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream min(mpath);
  if (!min) throw IoError("no checkpoint manifest at '" + mpath.string() + "'");
  nlohmann::json m;
  try {
    min >> m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt checkpoint manifest '" + mpath.string() + "': " + e.what());
  }

  try {
    const ModelRole role = model_role_from_string(m.at("role").get<std::string>());
    if (expected_role && role != *expected_role) {
      throw ConfigError("checkpoint '" + dir + "' holds a " + to_string(role) +
                        " model but a " + to_string(*expected_role) + " model is required");
    }
    const DenoiserConfig net_cfg = net_from_json(m.at("network"));
    const auto& sj = m.at("schedule");
    const DiffusionSchedule sched =
        build_schedule(schedule_kind_from_string(sj.at("kind").get<std::string>()),
                       sj.at("steps").get<int>(), sj.at("beta_start").get<double>(),
                       sj.at("beta_end").get<double>());
    const auto count = m.at("parameter_count").get<std::uint64_t>();
    const auto crc = m.at("weights_crc32").get<std::uint32_t>();

    const fs::path blob = fs::path(dir) / m.at("weights").get<std::string>();
    std::ifstream in(blob, std::ios::binary);
    if (!in) throw IoError("cannot read weights '" + blob.string() + "'");
    char magic[sizeof kMagic];
    std::uint64_t stored = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&stored), sizeof stored);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
      throw FormatError("'" + blob.string() + "' is not a solodiff weights blob");
    }
    if (stored != count) {
      throw FormatError("weights blob holds " + std::to_string(stored) +
                        " parameters but the manifest records " + std::to_string(count));
    }
    std::vector<float> values(count);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw FormatError("weights blob '" + blob.string() + "' is truncated");
    in.peek();
    if (!in.eof()) throw FormatError("weights blob '" + blob.string() + "' has trailing bytes");
    if (crc32_of(values) != crc) {
      throw FormatError("weights blob '" + blob.string() + "' fails its CRC32 check");
    }
    Denoiser net = [&] {
      try {
        return Denoiser::from_parameters(net_cfg, values);
      } catch (const ParameterError& e) {
        throw FormatError(std::string("checkpoint does not match its architecture: ") + e.what());
      }
    }();

    LoadedCheckpoint out{
        Model{role, prediction_target_from_string(m.at("prediction").get<std::string>()), sched,
              std::move(net), m.at("iterations").get<long>(), m.at("k_range").get<int>()},
        CheckpointInfo{}, m};
    const auto& ss = m.at("source_shape");
    out.info.source_shape = Shape{ss.at("channels").get<int>(), ss.at("height").get<int>(),
                                  ss.at("width").get<int>()};
    out.info.config = m.value("config", nlohmann::json::object());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest '" + mpath.string() + "' is incomplete: " + e.what());
  }
}

LoadedCheckpoint load_checkpoint_any(const std::string& dir,
                                     std::initializer_list<ModelRole> allowed) {
  LoadedCheckpoint c = load_checkpoint(dir);
  for (ModelRole r : allowed) {
    if (c.model.role == r) return c;
  }
  std::string names;
  for (ModelRole r : allowed) names += (names.empty() ? "" : " or ") + to_string(r);
  throw ConfigError("checkpoint '" + dir + "' holds a " + to_string(c.model.role) +
                    " model but a " + names + " model is required");
}

}  // namespace solodiff
