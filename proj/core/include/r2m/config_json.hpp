#pragma once

#include <filesystem>
#include <json.hpp>

#include "r2m/net.hpp"
#include "r2m/phantom.hpp"
#include "r2m/train.hpp"

namespace r2m {

nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const PhantomSpec& spec);

/// Strict parse: every field must be present (checkpoint configs are always
/// written complete).
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Partial parses: fields present in `j` override `base`.
ModelConfig apply_model_overrides(ModelConfig base, const nlohmann::json& j);
TrainConfig apply_train_overrides(TrainConfig base, const nlohmann::json& j);
PhantomSpec apply_phantom_overrides(PhantomSpec base, const nlohmann::json& j);

/// Merged tool configuration: a preset plus optional JSON sections, each
/// validated before any work starts.
struct RunConfig {
  std::string preset = "desk";
  ModelConfig model;
  TrainConfig train;
  PhantomSpec phantom;

  static RunConfig from_preset(const std::string& preset);
  /// Loads `path` (may be empty for preset defaults) and merges its sections.
  static RunConfig load(const std::filesystem::path& path,
                        const std::string& preset_flag);

  void validate() const;
  nlohmann::json to_json() const;
};

}  // namespace r2m
