#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "ufcmil/model.hpp"
#include "ufcmil/trainer.hpp"

namespace ufcmil {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Overlays recognised keys of a flat JSON object onto `cfg`. Unknown keys
/// are rejected with ConfigError.
void apply_json(const nlohmann::json& j, RunConfig& cfg);

RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const RunConfig& cfg);

}  // namespace ufcmil
