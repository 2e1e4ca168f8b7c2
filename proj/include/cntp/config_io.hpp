#pragma once

#include <filesystem>

#include <json.hpp>

#include "cntp/core.hpp"

namespace cntp {

/// JSON object with every DecodeConfig field.
nlohmann::json config_to_json(const DecodeConfig& config);

/// Fields absent from the object keep their defaults; unknown keys and
/// wrongly typed values throw ConfigError. The result is validated.
DecodeConfig config_from_json(const nlohmann::json& j, DecodeConfig base = {});

DecodeConfig load_config(const std::filesystem::path& path, DecodeConfig base = {});
void save_config(const std::filesystem::path& path, const DecodeConfig& config);

nlohmann::json ledger_to_json(const CostLedger& cost);
CostLedger ledger_from_json(const nlohmann::json& j);

}  // namespace cntp
