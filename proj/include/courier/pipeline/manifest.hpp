#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace courier::pipeline {

inline constexpr const char* kManifestName = "manifest.json";

struct InputRecord {
  std::string path;
  std::string sha256;
  friend bool operator==(const InputRecord&, const InputRecord&) = default;
};

// Written next to a stage's outputs. Inputs are keyed by role, outputs by
// file name within the stage directory.
struct Manifest {
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, InputRecord> inputs;
  std::map<std::string, std::string> outputs;
  double wall_seconds = 0.0;
  std::string version;
};

nlohmann::json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

void write_manifest(const Manifest& m, const std::filesystem::path& dir);
// False when `dir` holds no readable manifest.
bool read_manifest(const std::filesystem::path& dir, Manifest& out);

// Role -> path digests. A missing path is a MissingArtifactError naming it.
std::map<std::string, InputRecord> digest_inputs(const std::map<std::string, std::filesystem::path>& inputs);

// True when `dir` holds a manifest for the same stage, config hash, seed and
// input digests, and every recorded output still matches its digest.
bool up_to_date(const std::filesystem::path& dir, const std::string& stage, const std::string& config_hash,
                std::uint64_t seed, const std::map<std::string, InputRecord>& inputs);

// Names of recorded inputs or outputs whose current digest differs from the
// manifest (or that are gone).
std::vector<std::string> verify_manifest(const std::filesystem::path& dir);

}  // namespace courier::pipeline
