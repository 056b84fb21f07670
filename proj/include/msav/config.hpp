#pragma once

#include <filesystem>

#include "msav/data.hpp"
#include "msav/dsp.hpp"
#include "msav/model.hpp"
#include "msav/training.hpp"

namespace msav {

/// Full run configuration: model, training, mixup, and mel front-end
/// settings plus the global seed. JSON layout mirrors the struct (top-level
/// keys "seed", "model", "train", "mixup", "mel"); unknown keys anywhere are
/// rejected. Fields left out of the JSON keep their defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  MixupConfig mixup;
  dsp::MelConfig mel;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace msav
