#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "csdpaint/pipeline.hpp"

namespace csdpaint {

// Applies one dotted override ("stages.1.lambda=0.25") to a YAML document.
// Numeric segments index sequences; missing map keys are created. The value
// is parsed as a YAML scalar or flow collection.
void apply_override(YAML::Node& root, const std::string& assignment);

struct LoadedConfig {
  TrainConfig config;
  YAML::Node effective;  // complete, with defaults filled in
};

// Parses a run config document. Relative paths resolve against `base_dir`.
// Unknown keys and bad values raise ConfigError naming the dotted key.
LoadedConfig parse_config(const YAML::Node& root, const std::filesystem::path& base_dir);

LoadedConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

std::string emit_yaml(const YAML::Node& node);

}  // namespace csdpaint
