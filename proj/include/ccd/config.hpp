#pragma once

// Flat key=value configuration. Every engine hyperparameter has one key; the
// same table drives config files, CLI flags and the config echo in reports.

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ccd/pipeline.hpp"

namespace ccd {

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const EngineConfig&)> get;
  std::function<void(EngineConfig&, const std::string&)> set;  // throws ConfigError
};

const std::vector<ConfigKey>& config_keys();

void set_config_value(EngineConfig& config, const std::string& key, const std::string& value);

// Lines are "key = value"; blank lines and lines starting with '#' are skipped.
void apply_config_text(EngineConfig& config, const std::string& text);
void apply_config_file(EngineConfig& config, const std::filesystem::path& path);

// (key, value) for every key, in table order.
std::vector<std::pair<std::string, std::string>> config_echo(const EngineConfig& config);
std::string to_config_text(const EngineConfig& config);

}  // namespace ccd
