#include "courier/downstream/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "courier/error.hpp"

namespace courier::downstream {

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ContractError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks are 1-based; the tie block i..j-1 shares their mean.
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]]) {
        pos_rank_sum += avg_rank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auc: needs at least one positive and one negative");
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

GroupedMetric gauc(std::span<const ScoredGroup> groups) {
  GroupedMetric out;
  double total = 0.0;
  for (const ScoredGroup& g : groups) {
    const auto pos = static_cast<std::size_t>(std::count_if(g.labels.begin(), g.labels.end(), [](auto y) { return y != 0; }));
    if (pos == 0 || pos == g.labels.size()) {
      ++out.n_skipped;
      continue;
    }
    total += auc(g.scores, g.labels);
    ++out.n_valid;
  }
  if (out.n_valid == 0) throw UndefinedMetricError("gauc: no session has both a positive and a negative");
  out.value = total / static_cast<double>(out.n_valid);
  return out;
}

double ndcg_at_k(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t k) {
  if (scores.size() != labels.size()) throw ContractError("ndcg: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, order.size()); ++r)
    if (labels[order[r]]) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  const auto pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto y) { return y != 0; }));
  if (pos == 0) throw UndefinedMetricError("ndcg: session has no positive");
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, pos); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

GroupedMetric mean_ndcg_at_k(std::span<const ScoredGroup> groups, std::size_t k) {
  GroupedMetric out;
  double total = 0.0;
  for (const ScoredGroup& g : groups) {
    if (std::none_of(g.labels.begin(), g.labels.end(), [](auto y) { return y != 0; })) {
      ++out.n_skipped;
      continue;
    }
    total += ndcg_at_k(g.scores, g.labels, k);
    ++out.n_valid;
  }
  if (out.n_valid == 0) throw UndefinedMetricError("ndcg: no session has a positive");
  out.value = total / static_cast<double>(out.n_valid);
  return out;
}

MetricsReport evaluate_groups(std::span<const ScoredGroup> groups) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (const ScoredGroup& g : groups) {
    scores.insert(scores.end(), g.scores.begin(), g.scores.end());
    labels.insert(labels.end(), g.labels.begin(), g.labels.end());
  }
  MetricsReport r;
  r.auc = auc(scores, labels);
  const GroupedMetric g = gauc(groups);
  r.gauc = g.value;
  r.n_sessions = g.n_valid;
  r.n_skipped = g.n_skipped;
  r.ndcg10 = mean_ndcg_at_k(groups, 10).value;
  return r;
}

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j{{"auc", r.auc},         {"gauc", r.gauc}, {"ndcg10", r.ndcg10},
                   {"n_sessions", r.n_sessions}, {"n_skipped", r.n_skipped}, {"mode", r.mode},
                   {"seed", r.seed},       {"config_hash", r.config_hash}};
  if (r.alignment) j["alignment"] = *r.alignment;
  if (r.uniformity) j["uniformity"] = *r.uniformity;
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.auc = j.at("auc").get<double>();
    r.gauc = j.at("gauc").get<double>();
    r.ndcg10 = j.at("ndcg10").get<double>();
    r.n_sessions = j.at("n_sessions").get<std::size_t>();
    r.n_skipped = j.at("n_skipped").get<std::size_t>();
    r.mode = j.at("mode").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    if (j.contains("alignment")) r.alignment = j.at("alignment").get<double>();
    if (j.contains("uniformity")) r.uniformity = j.at("uniformity").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed metrics report: ") + e.what());
  }
}

}  // namespace courier::downstream
