#include "courier/synthgen/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "courier/common/rng.hpp"
#include "courier/error.hpp"

namespace courier::synth {
namespace {

void validate(const CatalogConfig& c) {
  if (c.num_items < 1) throw ConfigError("catalog.num_items must be >= 1");
  if (c.num_chars < 2) throw ConfigError("catalog.num_chars must be >= 2");
  if (c.feature_dim < 1) throw ConfigError("catalog.feature_dim must be >= 1");
  if (c.num_categories < 1 || c.num_categories > c.num_chars) {
    throw ConfigError("catalog.num_categories must be in [1, num_chars]");
  }
  if (c.min_chars_per_item < 1 || c.min_chars_per_item > c.max_chars_per_item ||
      c.max_chars_per_item > c.num_chars) {
    throw ConfigError("catalog chars_per_item range must satisfy 1 <= min <= max <= num_chars");
  }
  if (!(c.noise_sigma >= 0.0)) throw ConfigError("catalog.noise_sigma must be >= 0");
  if (!(c.category_focus >= 0.0 && c.category_focus <= 1.0)) {
    throw ConfigError("catalog.category_focus must be in [0, 1]");
  }
}

void validate(const SessionConfig& c) {
  if (c.num_users < 1) throw ConfigError("sessions.num_users must be >= 1");
  if (c.page_size < 1) throw ConfigError("sessions.page_size must be >= 1");
  if (c.l_click < 1) throw ConfigError("sessions.l_click must be >= 1");
  if (c.min_interest < 1 || c.min_interest > c.max_interest) {
    throw ConfigError("sessions interest range must satisfy 1 <= min <= max");
  }
  if (!(c.on_interest_rate >= 0.0 && c.on_interest_rate <= 1.0)) {
    throw ConfigError("sessions.on_interest_rate must be in [0, 1]");
  }
  if (!std::isfinite(c.click_slope) || std::isnan(c.click_bias)) {
    throw ConfigError("sessions click model parameters must be numbers");
  }
  if (c.max_retries < 1) throw ConfigError("sessions.max_retries must be >= 1");
}

// Draws `count` characteristics i.i.d. from `dist` and returns the distinct
// ones, sorted.
std::vector<int> draw_char_set(const std::vector<double>& dist, std::size_t count, Rng& rng) {
  std::discrete_distribution<int> pick(dist.begin(), dist.end());
  std::set<int> chosen;
  for (std::size_t i = 0; i < count; ++i) chosen.insert(pick(rng));
  return {chosen.begin(), chosen.end()};
}

struct UserProfile {
  std::vector<int> interests;
};

class SessionSampler {
 public:
  SessionSampler(const Catalog& catalog, const SessionConfig& config, std::uint64_t seed)
      : catalog_(catalog), config_(config), seed_(seed) {
    const std::size_t n_chars = catalog.space.num_chars;
    by_char_.resize(n_chars);
    std::size_t n_categories = 0;
    for (const Item& it : catalog.items) {
      for (int c : it.chars) by_char_[static_cast<std::size_t>(c)].push_back(it.item_id);
      n_categories = std::max(n_categories, static_cast<std::size_t>(it.category_id) + 1);
    }
    // Empirical characteristic mix of each category; user interests follow it.
    category_mix_.assign(n_categories, std::vector<double>(n_chars, 0.0));
    for (const Item& it : catalog.items)
      for (int c : it.chars) category_mix_[static_cast<std::size_t>(it.category_id)][static_cast<std::size_t>(c)] += 1.0;
  }

  UserProfile profile(std::int64_t user) const {
    Rng rng = make_rng(seed_, "user", static_cast<std::uint64_t>(user));
    std::uniform_int_distribution<std::size_t> cat(0, category_mix_.size() - 1);
    std::size_t category = cat(rng);
    std::uniform_int_distribution<std::size_t> size(config_.min_interest, config_.max_interest);
    const std::size_t want = size(rng);
    const auto& mix = category_mix_[category];
    const auto support = static_cast<std::size_t>(std::count_if(mix.begin(), mix.end(), [](double w) { return w > 0; }));
    std::discrete_distribution<int> pick(mix.begin(), mix.end());
    std::set<int> chosen;
    for (std::size_t guard = 0; chosen.size() < std::min(want, support) && guard < 1000; ++guard) {
      chosen.insert(pick(rng));
    }
    return {{chosen.begin(), chosen.end()}};
  }

  Session sample(std::int64_t session_id) const {
    Rng rng = make_rng(seed_, "session", static_cast<std::uint64_t>(session_id));
    std::uniform_int_distribution<std::int64_t> user_dist(0, static_cast<std::int64_t>(config_.num_users) - 1);
    const std::int64_t user = user_dist(rng);
    const UserProfile prof = profile(user);
    if (prof.interests.empty()) throw DataError("user " + std::to_string(user) + " has no interests");

    std::uniform_int_distribution<std::size_t> any_item(0, catalog_.items.size() - 1);
    std::bernoulli_distribution on_interest(config_.on_interest_rate);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (std::size_t attempt = 0; attempt < config_.max_retries; ++attempt) {
      Session s;
      s.session_id = session_id;
      s.user_id = user;
      std::set<std::int64_t> used;
      auto draw_distinct = [&](auto&& draw) {
        std::int64_t id = draw();
        for (int tries = 0; used.count(id) && tries < 20; ++tries) id = draw();
        used.insert(id);
        return id;
      };
      auto interest_item = [&]() { return pick_on_interest(prof, rng); };
      auto random_item = [&]() { return static_cast<std::int64_t>(any_item(rng)); };

      for (std::size_t k = 0; k < config_.l_click; ++k) {
        s.click_history.push_back(draw_distinct(interest_item));
        s.click_mask.push_back(1);
      }
      const std::vector<int> hist = history_chars(catalog_, s);
      for (std::size_t j = 0; j < config_.page_size; ++j) {
        const std::int64_t id = on_interest(rng) ? draw_distinct(interest_item) : draw_distinct(random_item);
        const double p = click_probability(overlap_fraction(catalog_.item(id).chars, hist),
                                           config_.click_slope, config_.click_bias);
        s.pv_items.push_back(id);
        s.labels.push_back(unif(rng) < p ? 1 : 0);
        s.pv_mask.push_back(1);
      }
      if (s.passes_filter()) return s;
    }
    throw ConfigError("session " + std::to_string(session_id) + " failed the click filter " +
                      std::to_string(config_.max_retries) +
                      " times (max_retries); the click model yields no positives");
  }

 private:
  std::int64_t pick_on_interest(const UserProfile& prof, Rng& rng) const {
    std::uniform_int_distribution<std::size_t> which(0, prof.interests.size() - 1);
    for (int guard = 0; guard < 64; ++guard) {
      const auto& pool = by_char_[static_cast<std::size_t>(prof.interests[which(rng)])];
      if (pool.empty()) continue;
      std::uniform_int_distribution<std::size_t> at(0, pool.size() - 1);
      return pool[at(rng)];
    }
    throw DataError("no catalog item carries any of the user's interest characteristics");
  }

  const Catalog& catalog_;
  const SessionConfig& config_;
  std::uint64_t seed_;
  std::vector<std::vector<std::int64_t>> by_char_;
  std::vector<std::vector<double>> category_mix_;
};

}  // namespace

diff::Tensor Catalog::feature_matrix() const {
  const std::size_t d = space.feature_dim;
  diff::Tensor out({items.size(), d});
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].features.size() != d) throw DataError("item " + std::to_string(i) + " has wrong feature width");
    std::copy(items[i].features.begin(), items[i].features.end(), out.row(i).begin());
  }
  return out;
}

const Item& Catalog::item(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= items.size()) {
    throw DataError("unknown item id " + std::to_string(id));
  }
  return items[static_cast<std::size_t>(id)];
}

std::size_t Session::num_clicks() const {
  return static_cast<std::size_t>(std::count(click_mask.begin(), click_mask.end(), 1));
}

std::size_t Session::num_pv() const {
  return static_cast<std::size_t>(std::count(pv_mask.begin(), pv_mask.end(), 1));
}

std::size_t Session::num_positives() const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) n += (pv_mask[j] && labels[j]) ? 1 : 0;
  return n;
}

bool Session::passes_filter() const { return num_clicks() >= 1 && num_positives() >= 1; }

std::vector<double> category_char_distribution(const CatalogConfig& config, std::size_t category) {
  const std::size_t c = config.num_chars;
  std::vector<bool> own(c, false);
  std::size_t n_own = 0;
  for (std::size_t j = 0; j < c; ++j) {
    if (j % config.num_categories == category) {
      own[j] = true;
      ++n_own;
    }
  }
  std::vector<double> dist(c);
  if (n_own == c) {
    std::fill(dist.begin(), dist.end(), 1.0 / static_cast<double>(c));
    return dist;
  }
  for (std::size_t j = 0; j < c; ++j) {
    dist[j] = own[j] ? config.category_focus / static_cast<double>(n_own)
                     : (1.0 - config.category_focus) / static_cast<double>(c - n_own);
  }
  return dist;
}

Catalog generate_catalog(const CatalogConfig& config, std::uint64_t seed) {
  validate(config);
  Catalog catalog;
  CharacteristicSpace& space = catalog.space;
  space.num_chars = config.num_chars;
  space.feature_dim = config.feature_dim;
  space.noise_sigma = config.noise_sigma;
  space.projection = diff::Tensor({config.num_chars, config.feature_dim});
  {
    Rng rng = make_rng(seed, "projection");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t r = 0; r < config.num_chars; ++r) {
      auto row = space.projection.row(r);
      double ss = 0.0;
      for (double& x : row) {
        x = normal(rng);
        ss += x * x;
      }
      const double norm = std::sqrt(ss);
      for (double& x : row) x /= norm;
    }
  }

  std::vector<std::vector<double>> dists;
  for (std::size_t k = 0; k < config.num_categories; ++k) dists.push_back(category_char_distribution(config, k));

  Rng rng = make_rng(seed, "items");
  std::uniform_int_distribution<std::size_t> size_dist(config.min_chars_per_item, config.max_chars_per_item);
  std::normal_distribution<double> noise(0.0, 1.0);
  catalog.items.reserve(config.num_items);
  for (std::size_t i = 0; i < config.num_items; ++i) {
    Item item;
    item.item_id = static_cast<std::int64_t>(i);
    const std::size_t category = i % config.num_categories;
    item.category_id = static_cast<std::int64_t>(category);
    item.chars = draw_char_set(dists[category], size_dist(rng), rng);
    item.features.assign(config.feature_dim, 0.0);
    const double inv = 1.0 / static_cast<double>(item.chars.size());
    for (int c : item.chars) {
      auto row = space.projection.row(static_cast<std::size_t>(c));
      for (std::size_t j = 0; j < config.feature_dim; ++j) item.features[j] += row[j] * inv;
    }
    for (double& x : item.features) x += config.noise_sigma * noise(rng);
    catalog.items.push_back(std::move(item));
  }
  return catalog;
}

double overlap_fraction(const std::vector<int>& item_chars, const std::vector<int>& history) {
  if (item_chars.empty()) return 0.0;
  std::size_t hit = 0;
  for (int c : item_chars) hit += std::binary_search(history.begin(), history.end(), c) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(item_chars.size());
}

double click_probability(double overlap, double slope, double bias) {
  const double z = slope * overlap + bias;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<int> history_chars(const Catalog& catalog, const Session& session) {
  std::set<int> chars;
  for (std::size_t k = 0; k < session.click_history.size(); ++k) {
    if (!session.click_mask[k]) continue;
    const auto& cs = catalog.item(session.click_history[k]).chars;
    chars.insert(cs.begin(), cs.end());
  }
  return {chars.begin(), chars.end()};
}

std::vector<Session> generate_sessions(const Catalog& catalog, const SessionConfig& config,
                                       std::size_t num_sessions, std::uint64_t seed,
                                       std::int64_t first_session_id) {
  validate(config);
  if (catalog.items.empty()) throw ConfigError("cannot generate sessions from an empty catalog");
  SessionSampler sampler(catalog, config, seed);
  std::vector<Session> out;
  out.reserve(num_sessions);
  for (std::size_t i = 0; i < num_sessions; ++i) {
    out.push_back(sampler.sample(first_session_id + static_cast<std::int64_t>(i)));
  }
  return out;
}

std::vector<Session> downsample_negatives(const std::vector<Session>& sessions, double keep_rate,
                                          std::uint64_t seed) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) {
    throw ConfigError("keep_rate must be in (0, 1], got " + std::to_string(keep_rate));
  }
  std::vector<Session> out;
  out.reserve(sessions.size());
  for (const Session& s : sessions) {
    Rng rng = make_rng(seed, "downsample", static_cast<std::uint64_t>(s.session_id));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Session kept = s;
    kept.pv_items.clear();
    kept.labels.clear();
    kept.pv_mask.clear();
    for (std::size_t j = 0; j < s.pv_items.size(); ++j) {
      if (!s.pv_mask[j]) continue;
      // Draw for every real slot so the stream does not depend on labels.
      const double u = unif(rng);
      if (s.labels[j] || u < keep_rate) {
        kept.pv_items.push_back(s.pv_items[j]);
        kept.labels.push_back(s.labels[j]);
        kept.pv_mask.push_back(1);
      }
    }
    if (kept.passes_filter()) out.push_back(std::move(kept));
  }
  return out;
}

Session page_sort_trim(const Session& session, std::size_t l_pv) {
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < session.pv_items.size(); ++j)
    if (session.pv_mask[j]) order.push_back(j);
  std::stable_partition(order.begin(), order.end(), [&](std::size_t j) { return session.labels[j] != 0; });
  if (order.size() > l_pv) order.resize(l_pv);
  Session out = session;
  out.pv_items.assign(l_pv, kPadItem);
  out.labels.assign(l_pv, 0);
  out.pv_mask.assign(l_pv, 0);
  for (std::size_t j = 0; j < order.size(); ++j) {
    out.pv_items[j] = session.pv_items[order[j]];
    out.labels[j] = session.labels[order[j]];
    out.pv_mask[j] = 1;
  }
  return out;
}

DatasetSplit build_dataset(const DatasetConfig& config, std::uint64_t seed) {
  if (config.l_pv < 1) throw ConfigError("l_pv must be >= 1");
  if (config.num_train < 1) throw ConfigError("num_train must be >= 1");
  DatasetSplit split;
  split.catalog = generate_catalog(config.catalog, derive_seed(seed, "catalog"));
  // One stream in simulated time: train sessions first, then test sessions.
  const auto raw = generate_sessions(split.catalog, config.sessions, config.num_train + config.num_test,
                                     derive_seed(seed, "sessions"));
  const auto kept = downsample_negatives(raw, config.keep_rate, derive_seed(seed, "downsample"));
  for (const Session& s : kept) {
    Session trimmed = page_sort_trim(s, config.l_pv);
    if (static_cast<std::size_t>(s.session_id) < config.num_train) {
      split.train.push_back(std::move(trimmed));
    } else {
      split.test.push_back(std::move(trimmed));
    }
  }
  return split;
}

}  // namespace courier::synth
