#pragma once

#include <string>

#include "json.hpp"

#include "capsforge/baseline.hpp"
#include "capsforge/capsnet.hpp"
#include "capsforge/trainer.hpp"

namespace capsforge {

void to_json(nlohmann::json& j, const CapsNetConfig& cfg);
void from_json(const nlohmann::json& j, CapsNetConfig& cfg);
void to_json(nlohmann::json& j, const CnnConfig& cfg);
void from_json(const nlohmann::json& j, CnnConfig& cfg);
void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// Parses a checkpoint's config snapshot; throws FormatError on malformed JSON.
nlohmann::json parse_config_json(const std::string& text);

// SHA-256 of a file's contents as lowercase hex; IoError if unreadable.
std::string sha256_file(const std::string& path);

}  // namespace capsforge
