#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mcalab/datagen.hpp"
#include "mcalab/model.hpp"
#include "mcalab/objectives.hpp"
#include "mcalab/train.hpp"

namespace mcalab {

// JSON mirrors of the config structs. Parsing is strict: unknown keys are
// rejected with the list of valid keys; missing keys keep their defaults.

nlohmann::json generator_config_to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

nlohmann::json encoder_config_to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

nlohmann::json mca_config_to_json(const MCAConfig& c);
MCAConfig mca_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Applies a dotted-path override ("mca.alpha=0.1") to a JSON document.
// The value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& key_value);

}  // namespace mcalab
