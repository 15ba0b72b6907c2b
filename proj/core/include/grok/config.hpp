#pragma once

// Structured-text (JSON) configuration. Keys mirror the ModelConfig and
// TrainConfig field names; a "model" key may name a preset that explicit
// model keys then override.

#include <filesystem>
#include <string>

#include "grok/model.hpp"
#include "grok/train.hpp"

namespace grok {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json_text(const RunConfig& cfg);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::string train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace grok
