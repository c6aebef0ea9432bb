#include "courier/quantize/quantize.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "courier/common/rng.hpp"
#include "courier/diffcore/ops.hpp"
#include "courier/error.hpp"

namespace courier::quant {

using diff::Tensor;

namespace {

constexpr std::array<std::pair<ImageMode, std::string_view>, 4> kModeNames{{
    {ImageMode::none, "none"},
    {ImageMode::vector, "vector"},
    {ImageMode::simscore, "simscore"},
    {ImageMode::clusterid, "clusterid"},
}};

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

// Nearest center per row; returns the summed squared distance.
double assign_rows(const Tensor& x, const Tensor& centers, std::vector<std::int64_t>& out, std::vector<double>& dist) {
  const std::size_t n = x.rows(), k = centers.rows(), d = x.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = x.storage().data() + i * d;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double s = sq_dist(p, centers.storage().data() + c * d, d);
      if (s < best) {
        best = s;
        arg = c;
      }
    }
    out[i] = static_cast<std::int64_t>(arg);
    dist[i] = best;
    total += best;
  }
  return total;
}

Tensor plus_plus_init(const Tensor& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows(), d = x.cols();
  Tensor centers({k, d});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any(0, n - 1);
  auto take = [&](std::size_t c, std::size_t i) {
    std::copy_n(x.storage().begin() + static_cast<std::ptrdiff_t>(i * d), d,
                centers.storage().begin() + static_cast<std::ptrdiff_t>(c * d));
  };
  take(0, any(rng));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(x.storage().data() + i * d, centers.storage().data(), d);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = any(rng);
    }
    take(c, pick);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], sq_dist(x.storage().data() + i * d, centers.storage().data() + c * d, d));
  }
  return centers;
}

}  // namespace

std::string_view to_string(ImageMode mode) {
  for (const auto& [m, name] : kModeNames)
    if (m == mode) return name;
  return "unknown";
}

ImageMode parse_image_mode(std::string_view name) {
  for (const auto& [m, n] : kModeNames)
    if (n == name) return m;
  throw ConfigError("unknown image mode '" + std::string(name) + "'");
}

ClusterModel kmeans_fit(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t max_iters, double tol) {
  if (points.rank() != 2) throw DimensionError("kmeans_fit: points must be a matrix");
  const std::size_t n = points.rows(), d = points.cols();
  if (k == 0) throw ConfigError("kmeans_fit: k must be >= 1");
  if (n < k) throw ConfigError(fmt::format("kmeans_fit: {} points cannot fill k={} clusters", n, k));
  if (!points.all_finite()) throw NumericError("kmeans_fit: non-finite embedding");

  Rng rng = make_rng(seed, "kmeans");
  ClusterModel m;
  m.k = k;
  m.centers = plus_plus_init(points, k, rng);
  m.assignments.assign(n, 0);
  std::vector<double> dist(n);
  m.inertia = assign_rows(points, m.centers, m.assignments, dist);
  m.inertia_history.push_back(m.inertia);

  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(m.assignments[i]);
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += points.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) m.centers.at(c, j) = sums[c * d + j] / static_cast<double>(counts[c]);
    }
    // Distances to the updated centers drive the reseeding of empty clusters.
    for (std::size_t i = 0; i < n; ++i)
      dist[i] = sq_dist(points.storage().data() + i * d,
                        m.centers.storage().data() + static_cast<std::size_t>(m.assignments[i]) * d, d);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      for (std::size_t j = 0; j < d; ++j) m.centers.at(c, j) = points.at(far, j);
      dist[far] = 0.0;
    }
    const double prev = m.inertia;
    m.inertia = assign_rows(points, m.centers, m.assignments, dist);
    m.inertia_history.push_back(m.inertia);
    if (prev - m.inertia < tol) break;
  }
  return m;
}

Tensor normalize_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    double s = 0.0;
    for (double v : r) s += v * v;
    const double norm = std::sqrt(s);
    if (norm <= diff::kNormEpsilon) throw DegenerateInputError(fmt::format("row {} has zero norm", i));
    for (double& v : r) v /= norm;
  }
  return out;
}

ClusterModel fit_clusters(const Tensor& embeddings, const KmeansConfig& config, std::uint64_t seed) {
  ClusterModel m = kmeans_fit(config.normalize ? normalize_rows(embeddings) : embeddings, config.k, seed,
                              config.max_iters, config.tol);
  m.normalized = config.normalize;
  return m;
}

std::int64_t assign_cluster(std::span<const double> embedding, const ClusterModel& model) {
  const std::size_t d = model.centers.cols();
  if (embedding.size() != d) {
    throw ContractError(fmt::format("assign_cluster: embedding has {} dims, centers have {}", embedding.size(), d));
  }
  double best = std::numeric_limits<double>::infinity();
  std::int64_t arg = 0;
  for (std::size_t c = 0; c < model.centers.rows(); ++c) {
    const double s = sq_dist(embedding.data(), model.centers.storage().data() + c * d, d);
    if (s < best) {
      best = s;
      arg = static_cast<std::int64_t>(c);
    }
  }
  return arg;
}

std::vector<std::int64_t> assign_all(const Tensor& embeddings, const ClusterModel& model) {
  const Tensor x = model.normalized ? normalize_rows(embeddings) : embeddings;
  std::vector<std::int64_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = assign_cluster(x.row(i), model);
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("cosine: dimension mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na <= diff::kNormEpsilon || nb <= diff::kNormEpsilon) throw DegenerateInputError("cosine: zero-norm vector");
  return ab / (na * nb);
}

std::vector<double> simscore_features(std::span<const double> target, const Tensor& history,
                                      const std::vector<std::uint8_t>& mask) {
  if (mask.size() != history.rows()) throw ContractError("simscore_features: mask length differs from history");
  std::vector<double> out(history.rows(), 0.0);
  for (std::size_t l = 0; l < history.rows(); ++l)
    if (mask[l]) out[l] = cosine(target, history.row(l));
  return out;
}

double shared_char_cluster_ratio(const synth::Catalog& catalog, const std::vector<std::int64_t>& assignments) {
  if (assignments.size() != catalog.items.size()) throw ContractError("cluster map does not cover the catalog");
  std::uint64_t shared = 0, shared_same = 0, disjoint = 0, disjoint_same = 0;
  for (std::size_t i = 0; i < catalog.items.size(); ++i) {
    for (std::size_t j = i + 1; j < catalog.items.size(); ++j) {
      const bool same = assignments[i] == assignments[j];
      if (synth::overlap_fraction(catalog.items[i].chars, catalog.items[j].chars) > 0.0) {
        ++shared;
        shared_same += same;
      } else {
        ++disjoint;
        disjoint_same += same;
      }
    }
  }
  if (shared == 0 || disjoint == 0 || disjoint_same == 0) return std::numeric_limits<double>::infinity();
  return (static_cast<double>(shared_same) / static_cast<double>(shared)) /
         (static_cast<double>(disjoint_same) / static_cast<double>(disjoint));
}

void write_cluster_map(const std::vector<std::int64_t>& assignments, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < assignments.size(); ++i) out << i << '\t' << assignments[i] << '\n';
}

std::vector<std::int64_t> read_cluster_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cluster map not found: " + path.string());
  std::vector<std::int64_t> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t id = 0;
    std::int64_t c = 0;
    if (!(ls >> id >> c) || id != out.size() || c < 0) {
      throw DataError(fmt::format("{}:{}: malformed cluster map line", path.string(), out.size() + 1));
    }
    out.push_back(c);
  }
  return out;
}

void write_centers(const Tensor& centers, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t c = 0; c < centers.rows(); ++c) {
    std::string line = fmt::format("{}", c);
    for (double v : centers.row(c)) fmt::format_to(std::back_inserter(line), "\t{:.17g}", v);
    out << line << '\n';
  }
}

}  // namespace courier::quant
