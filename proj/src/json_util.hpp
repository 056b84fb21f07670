#pragma once

#include <json.hpp>

#include "msav/model.hpp"

// Internal JSON (de)serialization helpers shared by the checkpoint code and
// the run-config loader. Parsers reject unknown keys.

namespace msav {

nlohmann::json model_config_to_json(const ModelConfig& c);
void model_config_from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace msav
