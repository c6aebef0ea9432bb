#include "courier/pipeline/config.hpp"

#include <fmt/format.h>

#include <fstream>

#include "courier/common/codec.hpp"
#include "courier/error.hpp"
#include "courier/trainer/trainer.hpp"

namespace courier::pipeline {

using nlohmann::json;

namespace {

template <typename T>
void read_key(const json& section, const std::string& prefix, const char* key, T& out, bool required = false) {
  if (!section.contains(key)) {
    if (required) throw ConfigError(fmt::format("missing required config key '{}{}'", prefix, key));
    return;
  }
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("config key '{}{}' has the wrong type", prefix, key));
  }
}

const json& section(const json& j, const char* name) {
  static const json empty = json::object();
  if (!j.contains(name)) return empty;
  if (!j.at(name).is_object()) throw ConfigError(fmt::format("config key '{}' must be an object", name));
  return j.at(name);
}

synth::DatasetConfig dataset_from_json(const json& d) {
  synth::DatasetConfig c;
  const std::string p = "data.";
  read_key(d, p, "num_items", c.catalog.num_items, true);
  read_key(d, p, "num_train", c.num_train, true);
  read_key(d, p, "num_test", c.num_test, true);
  read_key(d, p, "num_chars", c.catalog.num_chars);
  read_key(d, p, "feature_dim", c.catalog.feature_dim);
  read_key(d, p, "num_categories", c.catalog.num_categories);
  read_key(d, p, "min_chars_per_item", c.catalog.min_chars_per_item);
  read_key(d, p, "max_chars_per_item", c.catalog.max_chars_per_item);
  read_key(d, p, "noise_sigma", c.catalog.noise_sigma);
  read_key(d, p, "category_focus", c.catalog.category_focus);
  read_key(d, p, "num_users", c.sessions.num_users);
  read_key(d, p, "page_size", c.sessions.page_size);
  read_key(d, p, "l_click", c.sessions.l_click);
  read_key(d, p, "click_slope", c.sessions.click_slope);
  read_key(d, p, "click_bias", c.sessions.click_bias);
  read_key(d, p, "on_interest_rate", c.sessions.on_interest_rate);
  read_key(d, p, "min_interest", c.sessions.min_interest);
  read_key(d, p, "max_interest", c.sessions.max_interest);
  read_key(d, p, "max_retries", c.sessions.max_retries);
  read_key(d, p, "keep_rate", c.keep_rate);
  read_key(d, p, "l_pv", c.l_pv);
  return c;
}

}  // namespace

json dataset_config_to_json(const synth::DatasetConfig& c) {
  return {{"num_items", c.catalog.num_items},
          {"num_chars", c.catalog.num_chars},
          {"feature_dim", c.catalog.feature_dim},
          {"num_categories", c.catalog.num_categories},
          {"min_chars_per_item", c.catalog.min_chars_per_item},
          {"max_chars_per_item", c.catalog.max_chars_per_item},
          {"noise_sigma", c.catalog.noise_sigma},
          {"category_focus", c.catalog.category_focus},
          {"num_users", c.sessions.num_users},
          {"page_size", c.sessions.page_size},
          {"l_click", c.sessions.l_click},
          {"click_slope", c.sessions.click_slope},
          {"click_bias", c.sessions.click_bias},
          {"on_interest_rate", c.sessions.on_interest_rate},
          {"min_interest", c.sessions.min_interest},
          {"max_interest", c.sessions.max_interest},
          {"max_retries", c.sessions.max_retries},
          {"num_train", c.num_train},
          {"num_test", c.num_test},
          {"keep_rate", c.keep_rate},
          {"l_pv", c.l_pv}};
}

json kmeans_config_to_json(const quant::KmeansConfig& c) {
  return {{"k", c.k}, {"max_iters", c.max_iters}, {"tol", c.tol}, {"normalize", c.normalize}};
}

json config_to_json(const PipelineConfig& c) {
  return {{"seed", c.seed},
          {"data", dataset_config_to_json(c.data)},
          {"pretrain", train::pretrain_config_to_json(c.pretrain)},
          {"cluster", kmeans_config_to_json(c.cluster)},
          {"ctr", downstream::ctr_config_to_json(c.ctr)}};
}

PipelineConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig c;
  read_key(j, "", "seed", c.seed, true);
  if (!j.contains("data")) throw ConfigError("missing required config key 'data'");
  c.data = dataset_from_json(section(j, "data"));

  // Slot counts live in the data section; the model sections inherit them.
  json pre = section(j, "pretrain");
  json ctr = section(j, "ctr");
  for (const auto& [key, value] : {std::pair<const char*, std::size_t>{"l_pv", c.data.l_pv}, {"l_click", c.data.sessions.l_click}}) {
    if (pre.contains(key) && pre.at(key) != value) {
      throw ConfigError(fmt::format("config key 'pretrain.{}' disagrees with 'data.{}'", key, key));
    }
    pre[key] = value;
  }
  if (ctr.contains("l_click") && ctr.at("l_click") != c.data.sessions.l_click) {
    throw ConfigError("config key 'ctr.l_click' disagrees with 'data.l_click'");
  }
  ctr["l_click"] = c.data.sessions.l_click;
  c.pretrain = train::pretrain_config_from_json(pre);
  c.ctr = downstream::ctr_config_from_json(ctr);

  const json& cl = section(j, "cluster");
  read_key(cl, "cluster.", "k", c.cluster.k);
  read_key(cl, "cluster.", "max_iters", c.cluster.max_iters);
  read_key(cl, "cluster.", "tol", c.cluster.tol);
  read_key(cl, "cluster.", "normalize", c.cluster.normalize);
  if (c.cluster.k == 0) throw ConfigError("config key 'cluster.k' must be >= 1");
  return c;
}

namespace {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config {} is not valid JSON: {}", path.string(), e.what()));
  }
}

}  // namespace

PipelineConfig load_config(const std::filesystem::path& path) {
  json j = read_json_file(path);
  // A section given as a string names a per-stage file next to this one.
  if (j.is_object()) {
    for (const char* name : {"data", "pretrain", "cluster", "ctr"}) {
      if (j.contains(name) && j.at(name).is_string()) {
        j[name] = read_json_file(path.parent_path() / j.at(name).get<std::string>());
      }
    }
  }
  return parse_config(j);
}

std::string json_hash(const json& j) { return sha256_hex(j.dump()); }

}  // namespace courier::pipeline
