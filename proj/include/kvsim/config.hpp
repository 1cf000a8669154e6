#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "kvsim/sim.hpp"

namespace kvsim {

/// TOML text to a JSON tree. Throws ConfigError with the parser's location.
nlohmann::json parse_toml(std::string_view text, std::string_view source = "<string>");
/// JSON object tree to TOML text; nulls are dropped.
std::string emit_toml(const nlohmann::json& tree);

/// Reads a .toml or .json file into a JSON tree. Throws IoError/ConfigError.
nlohmann::json load_config_tree(const std::filesystem::path& path);

/// Canonical, fully resolved tree for a configuration.
nlohmann::json to_json(const SimConfig& config);
std::string to_toml(const SimConfig& config);

/// Strict conversion: unknown keys and wrong types raise ConfigError naming
/// the key. Scenario-level keys (baseline, population, sweep) are not
/// accepted here.
SimConfig sim_config_from_json(const nlohmann::json& tree);

}  // namespace kvsim
