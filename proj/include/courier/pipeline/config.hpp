#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "courier/downstream/ctr.hpp"
#include "courier/model/courier.hpp"
#include "courier/quantize/quantize.hpp"
#include "courier/synthgen/synthgen.hpp"
#include "json.hpp"

namespace courier::pipeline {

inline constexpr const char* kToolVersion = "courier 0.1.0";

// Whole-pipeline configuration. Required keys: "seed", "data.num_items",
// "data.num_train", "data.num_test". Everything else has a default.
struct PipelineConfig {
  std::uint64_t seed = 0;
  synth::DatasetConfig data;
  model::PretrainConfig pretrain;
  quant::KmeansConfig cluster;
  downstream::CtrConfig ctr;
};

// Throws ConfigError naming the first missing or malformed key.
PipelineConfig parse_config(const nlohmann::json& j);
// Sections may be inline objects or paths (relative to this file) of
// per-stage JSON files. ConfigError when a file is absent or not valid JSON.
PipelineConfig load_config(const std::filesystem::path& path);

nlohmann::json dataset_config_to_json(const synth::DatasetConfig& c);
nlohmann::json kmeans_config_to_json(const quant::KmeansConfig& c);
nlohmann::json config_to_json(const PipelineConfig& c);

// SHA-256 of the compact JSON dump.
std::string json_hash(const nlohmann::json& j);

}  // namespace courier::pipeline
