#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace courier::downstream {

// Rank-statistic AUC with average ranks for ties. Single-class input is an
// UndefinedMetricError.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Scores and labels of one page.
struct ScoredGroup {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

struct GroupedMetric {
  double value = 0.0;
  std::size_t n_valid = 0;
  std::size_t n_skipped = 0;
};

// Unweighted mean of per-group AUC over groups holding both classes.
// UndefinedMetricError when no group qualifies.
GroupedMetric gauc(std::span<const ScoredGroup> groups);

// NDCG@k of one group with binary gains; ties keep the original order.
// UndefinedMetricError when the group has no positive.
double ndcg_at_k(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t k = 10);
// Mean over groups with at least one positive.
GroupedMetric mean_ndcg_at_k(std::span<const ScoredGroup> groups, std::size_t k = 10);

struct MetricsReport {
  double auc = 0.0;
  double gauc = 0.0;
  double ndcg10 = 0.0;
  std::size_t n_sessions = 0;
  std::size_t n_skipped = 0;
  std::string mode;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::optional<double> alignment;
  std::optional<double> uniformity;
};

MetricsReport evaluate_groups(std::span<const ScoredGroup> groups);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

}  // namespace courier::downstream
