#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "courier/diffcore/tensor.hpp"
#include "courier/synthgen/synthgen.hpp"

// Turns item embeddings into downstream features: nearest-centroid ids and
// cosine scores against the click history.
namespace courier::quant {

enum class ImageMode { none, vector, simscore, clusterid };

std::string_view to_string(ImageMode mode);
// Throws ConfigError on unknown names.
ImageMode parse_image_mode(std::string_view name);

struct KmeansConfig {
  std::size_t k = 64;
  std::size_t max_iters = 100;
  // Stop once an iteration lowers inertia by less than this.
  double tol = 1e-9;
  // Cluster unit-normalized embeddings.
  bool normalize = true;
};

struct ClusterModel {
  std::size_t k = 0;
  diff::Tensor centers;  // [k x d]
  double inertia = 0.0;
  // Inertia after the initial assignment and after every Lloyd iteration.
  std::vector<double> inertia_history;
  // Cluster of each fitted point.
  std::vector<std::int64_t> assignments;
  // Whether inputs are L2-normalized before assignment.
  bool normalized = false;
};

// k-means++ seeding then Lloyd iterations on the rows of `points` as given.
// An emptied cluster is moved onto the point farthest from its center.
// N < k or k == 0 is a ConfigError.
ClusterModel kmeans_fit(const diff::Tensor& points, std::size_t k, std::uint64_t seed, std::size_t max_iters = 100,
                        double tol = 1e-9);

// Applies config.normalize, then kmeans_fit.
ClusterModel fit_clusters(const diff::Tensor& embeddings, const KmeansConfig& config, std::uint64_t seed);

// Nearest center by squared distance, lowest index on ties. No
// normalization is applied here.
std::int64_t assign_cluster(std::span<const double> embedding, const ClusterModel& model);
// Cluster of every row, normalizing first when the model was fitted that way.
std::vector<std::int64_t> assign_all(const diff::Tensor& embeddings, const ClusterModel& model);

// Rows divided by their norm; zero rows are a DegenerateInputError.
diff::Tensor normalize_rows(const diff::Tensor& x);

double cosine(std::span<const double> a, std::span<const double> b);

// Cosine of the target against each unmasked history row; masked slots are 0.
std::vector<double> simscore_features(std::span<const double> target, const diff::Tensor& history,
                                      const std::vector<std::uint8_t>& mask);

// P(same cluster | items share a characteristic) divided by
// P(same cluster | disjoint characteristics), over all item pairs.
double shared_char_cluster_ratio(const synth::Catalog& catalog, const std::vector<std::int64_t>& assignments);

// item_id \t cluster_id
void write_cluster_map(const std::vector<std::int64_t>& assignments, const std::filesystem::path& path);
std::vector<std::int64_t> read_cluster_map(const std::filesystem::path& path);
// cluster_id then d values
void write_centers(const diff::Tensor& centers, const std::filesystem::path& path);

}  // namespace courier::quant
