#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "courier/diffcore/tensor.hpp"

// Synthetic catalog and clickstream generator. Items are noisy projections of
// a hidden set of characteristics; users click items whose characteristics
// can be assembled from the characteristics of their click history.
namespace courier::synth {

inline constexpr std::int64_t kPadItem = -1;

struct CatalogConfig {
  std::size_t num_items = 2000;
  std::size_t num_chars = 128;
  std::size_t feature_dim = 64;
  std::size_t num_categories = 32;
  std::size_t min_chars_per_item = 1;
  std::size_t max_chars_per_item = 3;
  double noise_sigma = 0.1;
  // Probability mass a category puts on its own characteristics.
  double category_focus = 0.85;
};

struct CharacteristicSpace {
  std::size_t num_chars = 0;
  std::size_t feature_dim = 0;
  // [num_chars x feature_dim], unit-norm rows.
  diff::Tensor projection;
  double noise_sigma = 0.0;
};

struct Item {
  std::int64_t item_id = 0;
  std::int64_t category_id = 0;
  // Ground truth, sorted ascending. Never fed to models.
  std::vector<int> chars;
  std::vector<double> features;
};

struct Catalog {
  CharacteristicSpace space;
  std::vector<Item> items;

  // [num_items x feature_dim]; row i holds item i's features.
  diff::Tensor feature_matrix() const;
  const Item& item(std::int64_t id) const;
};

// One page view. Lists are padded with kPadItem; the masks are 1 on real
// slots. click_history[0] is the most recent click.
struct Session {
  std::int64_t session_id = 0;
  std::int64_t user_id = 0;
  std::vector<std::int64_t> click_history;
  std::vector<std::uint8_t> click_mask;
  std::vector<std::int64_t> pv_items;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pv_mask;

  std::size_t num_clicks() const;
  std::size_t num_pv() const;
  std::size_t num_positives() const;
  // At least one real history item and one positive label.
  bool passes_filter() const;

  friend bool operator==(const Session&, const Session&) = default;
};

struct SessionConfig {
  std::size_t num_users = 1000;
  // Items shown on a raw page before down-sampling and trimming.
  std::size_t page_size = 10;
  std::size_t l_click = 5;
  // P(click) = sigmoid(click_slope * overlap + click_bias), overlap being the
  // fraction of the item's characteristics present in the click history.
  double click_slope = 6.0;
  double click_bias = -6.0;
  // Share of page items drawn from the user's interests; the rest are uniform.
  double on_interest_rate = 0.25;
  std::size_t min_interest = 2;
  std::size_t max_interest = 4;
  std::size_t max_retries = 1000;
};

struct DatasetConfig {
  CatalogConfig catalog;
  SessionConfig sessions;
  std::size_t num_train = 10000;
  std::size_t num_test = 2000;
  double keep_rate = 0.2;
  std::size_t l_pv = 5;
};

struct DatasetSplit {
  Catalog catalog;
  std::vector<Session> train;
  std::vector<Session> test;
};

// Per-draw characteristic distribution of `category` (length num_chars).
std::vector<double> category_char_distribution(const CatalogConfig& config, std::size_t category);

Catalog generate_catalog(const CatalogConfig& config, std::uint64_t seed);

// Fraction of `item_chars` covered by `history_chars` (both sorted).
double overlap_fraction(const std::vector<int>& item_chars, const std::vector<int>& history_chars);
double click_probability(double overlap, double slope, double bias);
// Sorted union of the characteristics of every real history item.
std::vector<int> history_chars(const Catalog& catalog, const Session& session);

// Raw pages of config.page_size items with labels. Sessions failing the
// history/positive filter are regenerated; exhausting max_retries is a
// ConfigError. Session ids start at first_session_id.
std::vector<Session> generate_sessions(const Catalog& catalog, const SessionConfig& config,
                                       std::size_t num_sessions, std::uint64_t seed,
                                       std::int64_t first_session_id = 0);

// Keeps every positive and each negative with probability keep_rate; output
// lists are compacted (no padding). Sessions left without a positive are
// dropped.
std::vector<Session> downsample_negatives(const std::vector<Session>& sessions, double keep_rate,
                                          std::uint64_t seed);

// Positives first (stable within each class), truncated and padded to l_pv.
Session page_sort_trim(const Session& session, std::size_t l_pv);

DatasetSplit build_dataset(const DatasetConfig& config, std::uint64_t seed);

}  // namespace courier::synth
