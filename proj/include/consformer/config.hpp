#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "consformer/model.hpp"
#include "consformer/synth.hpp"

namespace cf::harness {

struct TrainConfig {
  std::uint64_t seed = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  double lambda = 0.5;
  double val_fraction = 0.1;
};

struct GradcheckConfig {
  double h = 1e-6;
  double tolerance = 1e-4;
  double floor = 1e-5;
  std::size_t d_model = 8;
  std::size_t n_heads = 2;
  std::size_t n_ocr = 6;
  std::size_t n_objects = 2;
  std::size_t n_question = 3;
  std::size_t span = 32;
};

// Everything one CLI run needs. On disk it is a flat JSON object whose keys
// are listed in config.cpp; unknown keys and wrongly typed values are errors.
struct RunConfig {
  synth::SynthConfig synth;
  model::ModelConfig model;
  TrainConfig train;
  GradcheckConfig gradcheck;
  std::string dataset;  // existing dataset file; empty = generate from synth keys
  std::string arm = "custom";
};

// Throws ValidationError naming the offending key.
RunConfig parse_config(const nlohmann::json& flat);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

// Synthetic-data keys alone (dataset header records).
nlohmann::json synth_to_json(const synth::SynthConfig& cfg);
synth::SynthConfig synth_from_json(const nlohmann::json& flat);

nlohmann::json model_to_json(const model::ModelConfig& cfg);
model::ModelConfig model_from_json(const nlohmann::json& j);
// FNV-1a over the canonical JSON dump of the model config, hex encoded.
std::string config_hash(const model::ModelConfig& cfg);

}  // namespace cf::harness
