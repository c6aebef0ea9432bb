#include "courier/synthgen/io.hpp"

#include <fstream>
#include <string>

#include "courier/error.hpp"
#include "json.hpp"

namespace courier::synth {
namespace {

using nlohmann::json;

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

void write_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (const Item& it : catalog.items) {
    json j;
    j["item_id"] = it.item_id;
    j["category_id"] = it.category_id;
    j["chars"] = it.chars;
    j["features"] = it.features;
    out << j.dump() << '\n';
  }
}

Catalog read_catalog(const std::filesystem::path& path) {
  Catalog catalog;
  int max_char = -1;
  for_each_line(path, [&](const json& j) {
    Item it;
    it.item_id = j.at("item_id").get<std::int64_t>();
    it.category_id = j.at("category_id").get<std::int64_t>();
    it.chars = j.at("chars").get<std::vector<int>>();
    it.features = j.at("features").get<std::vector<double>>();
    if (it.item_id != static_cast<std::int64_t>(catalog.items.size())) {
      throw DataError(path.string() + ": item ids must be 0..n-1 in order, got " + std::to_string(it.item_id));
    }
    if (!catalog.items.empty() && it.features.size() != catalog.items.front().features.size()) {
      throw DataError(path.string() + ": inconsistent feature width at item " + std::to_string(it.item_id));
    }
    for (int c : it.chars) max_char = std::max(max_char, c);
    catalog.items.push_back(std::move(it));
  });
  if (catalog.items.empty()) throw DataError(path.string() + ": empty catalog");
  catalog.space.feature_dim = catalog.items.front().features.size();
  catalog.space.num_chars = static_cast<std::size_t>(max_char + 1);
  return catalog;
}

void write_sessions(const std::vector<Session>& sessions, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (const Session& s : sessions) {
    json j;
    j["session_id"] = s.session_id;
    j["user_id"] = s.user_id;
    j["click_history"] = s.click_history;
    j["click_mask"] = s.click_mask;
    j["pv_items"] = s.pv_items;
    j["labels"] = s.labels;
    j["pv_mask"] = s.pv_mask;
    out << j.dump() << '\n';
  }
}

std::vector<Session> read_sessions(const std::filesystem::path& path) {
  std::vector<Session> sessions;
  for_each_line(path, [&](const json& j) {
    Session s;
    s.session_id = j.at("session_id").get<std::int64_t>();
    s.user_id = j.at("user_id").get<std::int64_t>();
    s.click_history = j.at("click_history").get<std::vector<std::int64_t>>();
    s.click_mask = j.at("click_mask").get<std::vector<std::uint8_t>>();
    s.pv_items = j.at("pv_items").get<std::vector<std::int64_t>>();
    s.labels = j.at("labels").get<std::vector<std::uint8_t>>();
    s.pv_mask = j.at("pv_mask").get<std::vector<std::uint8_t>>();
    if (s.click_history.size() != s.click_mask.size() || s.pv_items.size() != s.labels.size() ||
        s.pv_items.size() != s.pv_mask.size()) {
      throw DataError(path.string() + ": session " + std::to_string(s.session_id) + " has misaligned lists");
    }
    sessions.push_back(std::move(s));
  });
  return sessions;
}

}  // namespace courier::synth
