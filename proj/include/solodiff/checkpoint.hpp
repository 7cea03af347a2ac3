#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "solodiff/trainer.hpp"

namespace solodiff {

inline constexpr const char* kVersionTag = "solodiff 0.1.0";

struct CheckpointInfo {
  /// Shape of the frames the model was trained on (0s if unknown).
  Shape source_shape{};
  /// Free-form run configuration stored verbatim in the manifest.
  nlohmann::json config = nlohmann::json::object();
};

std::uint32_t crc32_of(std::span<const float> values);

/// Writes `dir`/weights.bin and `dir`/manifest.json (creating `dir`).
void save_checkpoint(const Model& model, const std::string& dir, const CheckpointInfo& info = {});

struct LoadedCheckpoint {
  Model model;
  CheckpointInfo info;
  nlohmann::json manifest;
};

/// Rebuilds the network from the manifest and loads its weights. Raises
/// FormatError on a corrupt or mismatched blob and ConfigError when
/// `expected_role` is given and differs from the stored role.
LoadedCheckpoint load_checkpoint(const std::string& dir,
                                 std::optional<ModelRole> expected_role = std::nullopt);

/// Same, accepting any of several roles.
LoadedCheckpoint load_checkpoint_any(const std::string& dir,
                                     std::initializer_list<ModelRole> allowed);

/// Writes JSON to `path` through a temporary file and rename.
void write_json_atomic(const std::string& path, const nlohmann::json& j);

}  // namespace solodiff
