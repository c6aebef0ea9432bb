#include "courier/pipeline/manifest.hpp"

#include <fstream>

#include "courier/common/codec.hpp"
#include "courier/error.hpp"

namespace courier::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

json manifest_to_json(const Manifest& m) {
  json inputs = json::object();
  for (const auto& [role, rec] : m.inputs) inputs[role] = {{"path", rec.path}, {"sha256", rec.sha256}};
  return {{"stage", m.stage},   {"config_hash", m.config_hash}, {"seed", m.seed},
          {"inputs", inputs},   {"outputs", m.outputs},         {"wall_seconds", m.wall_seconds},
          {"version", m.version}};
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  try {
    m.stage = j.at("stage").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [role, rec] : j.at("inputs").items()) {
      m.inputs[role] = {rec.at("path").get<std::string>(), rec.at("sha256").get<std::string>()};
    }
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.wall_seconds = j.at("wall_seconds").get<double>();
    m.version = j.at("version").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const Manifest& m, const fs::path& dir) {
  std::ofstream out(dir / kManifestName);
  if (!out) throw Error("cannot write " + (dir / kManifestName).string());
  out << manifest_to_json(m).dump(2) << '\n';
}

bool read_manifest(const fs::path& dir, Manifest& out) {
  std::ifstream in(dir / kManifestName);
  if (!in) return false;
  try {
    out = manifest_from_json(json::parse(in));
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

std::map<std::string, InputRecord> digest_inputs(const std::map<std::string, fs::path>& inputs) {
  std::map<std::string, InputRecord> records;
  for (const auto& [role, path] : inputs) {
    if (!fs::exists(path)) throw MissingArtifactError("missing " + role + " artifact: " + path.string());
    records[role] = {fs::absolute(path).lexically_normal().string(), sha256_file(path)};
  }
  return records;
}

bool up_to_date(const fs::path& dir, const std::string& stage, const std::string& config_hash, std::uint64_t seed,
                const std::map<std::string, InputRecord>& inputs) {
  Manifest m;
  if (!read_manifest(dir, m)) return false;
  if (m.stage != stage || m.config_hash != config_hash || m.seed != seed) return false;
  if (m.inputs.size() != inputs.size()) return false;
  for (const auto& [role, rec] : inputs) {
    auto it = m.inputs.find(role);
    if (it == m.inputs.end() || it->second.sha256 != rec.sha256) return false;
  }
  for (const auto& [name, digest] : m.outputs) {
    const fs::path p = dir / name;
    if (!fs::exists(p) || sha256_file(p) != digest) return false;
  }
  return true;
}

std::vector<std::string> verify_manifest(const fs::path& dir) {
  Manifest m;
  if (!read_manifest(dir, m)) throw MissingArtifactError("no manifest in " + dir.string());
  std::vector<std::string> bad;
  for (const auto& [role, rec] : m.inputs) {
    if (!fs::exists(rec.path) || sha256_file(rec.path) != rec.sha256) bad.push_back(role);
  }
  for (const auto& [name, digest] : m.outputs) {
    const fs::path p = dir / name;
    if (!fs::exists(p) || sha256_file(p) != digest) bad.push_back(name);
  }
  return bad;
}

}  // namespace courier::pipeline
