#pragma once

#include <filesystem>
#include <vector>

#include "courier/synthgen/synthgen.hpp"

// Line-delimited JSON persistence for catalogs and sessions.
//
// catalog.jsonl, one item per line:
//   {"item_id": 0, "category_id": 0, "chars": [0, 8], "features": [..]}
// sessions (train.jsonl / test.jsonl), one page per line:
//   {"session_id": 0, "user_id": 17, "click_history": [..], "click_mask": [..],
//    "pv_items": [..], "labels": [..], "pv_mask": [..]}
// Padded slots carry item id -1 and mask 0.
namespace courier::synth {

void write_catalog(const Catalog& catalog, const std::filesystem::path& path);
// Items must appear with ids 0..n-1 in order.
Catalog read_catalog(const std::filesystem::path& path);

void write_sessions(const std::vector<Session>& sessions, const std::filesystem::path& path);
std::vector<Session> read_sessions(const std::filesystem::path& path);

}  // namespace courier::synth
