#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "courier/downstream/metrics.hpp"
#include "courier/pipeline/config.hpp"
#include "courier/pipeline/manifest.hpp"

// The pipeline stages behind the CLI. Each stage writes its artifacts and a
// manifest into its own directory and is skipped when the manifest shows the
// same stage, config hash, seed and input digests.
namespace courier::pipeline {

namespace files {
inline constexpr const char* kCatalog = "catalog.jsonl";
inline constexpr const char* kTrain = "train.jsonl";
inline constexpr const char* kTest = "test.jsonl";
inline constexpr const char* kCheckpoint = "checkpoint.json";
inline constexpr const char* kTrainLog = "train_log.tsv";
inline constexpr const char* kEmbeddings = "embeddings.tsv";
inline constexpr const char* kClusters = "clusters.tsv";
inline constexpr const char* kCenters = "centers.tsv";
inline constexpr const char* kClusterReport = "cluster_report.json";
inline constexpr const char* kCtrModel = "ctr_model.json";
inline constexpr const char* kCtrLog = "ctr_log.tsv";
inline constexpr const char* kReport = "report.json";
}  // namespace files

struct RunOptions {
  // Re-run even when the manifest says the outputs are current.
  bool force = false;
  // pretrain only: continue from an existing checkpoint in the output dir.
  bool resume = false;
  bool quiet = false;
};

struct StageOutcome {
  bool skipped = false;
  Manifest manifest;
};

StageOutcome gen_data(const PipelineConfig& config, const std::filesystem::path& out, const RunOptions& opts = {});

// Missing dataset files are a MissingInputError.
StageOutcome pretrain(const PipelineConfig& config, const std::filesystem::path& data_dir,
                      const std::filesystem::path& out, const RunOptions& opts = {});

// `data_dir` is optional; with it the report includes the shared
// characteristic ratio of the clustering.
StageOutcome cluster(const PipelineConfig& config, const std::filesystem::path& embeddings,
                     const std::filesystem::path& out, const std::optional<std::filesystem::path>& data_dir,
                     const RunOptions& opts = {});

// Image inputs for ctr-train and eval. Which ones are needed depends on the
// image mode; a needed one that is unset or absent is a MissingArtifactError.
struct CtrInputs {
  std::filesystem::path data_dir;
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> clusters;
};

StageOutcome ctr_train(const PipelineConfig& config, const CtrInputs& inputs, const std::filesystem::path& out,
                       const RunOptions& opts = {});

// Scores the test split with the trained model, or with the labels
// themselves when `oracle` is set (no model needed). `train_log` optionally
// adds the final pre-training alignment and uniformity to the report.
StageOutcome eval(const PipelineConfig& config, const CtrInputs& inputs,
                  const std::optional<std::filesystem::path>& model, const std::filesystem::path& out, bool oracle,
                  const std::optional<std::filesystem::path>& train_log = std::nullopt,
                  const RunOptions& opts = {});

downstream::MetricsReport read_report(const std::filesystem::path& path);

struct GridCell {
  model::Variant variant = model::Variant::full;
  quant::ImageMode mode = quant::ImageMode::clusterid;
  std::uint64_t seed = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

struct ExperimentGrid {
  std::vector<GridCell> cells;
  std::size_t baseline = 0;
};

// {"baseline": cell?, "cells": [{"variant", "image_mode", "seed"?}, ...]}.
// Cells without a seed use `default_seed`; without a baseline the first cell
// is the baseline.
ExperimentGrid parse_grid(const nlohmann::json& j, std::uint64_t default_seed);
ExperimentGrid load_grid(const std::filesystem::path& path, std::uint64_t default_seed);

// Where a cell's stages live under the grid output directory. Data is
// shared per seed, pre-training and clustering per (variant, seed); cells
// with image mode none share one CTR run per seed.
struct CellDirs {
  std::filesystem::path data, pretrain, cluster, ctr, eval;
};
CellDirs cell_dirs(const GridCell& cell, const std::filesystem::path& out);

struct AblationRow {
  GridCell cell;
  bool ok = false;
  std::string error;
  // Every stage of the cell was served from cache.
  bool reused = false;
  downstream::MetricsReport report;
  // Absolute differences against the baseline row; NaN when either failed.
  double d_auc = 0.0;
  double d_gauc = 0.0;
  double d_ndcg10 = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::size_t baseline = 0;
  bool all_ok() const;
};

// Runs or reuses every cell under `out` (shared data/pretrain/cluster
// directories per seed and variant) and writes ablation.{json,tsv,txt}.
AblationResult ablate(const PipelineConfig& config, const ExperimentGrid& grid, const std::filesystem::path& out,
                      const RunOptions& opts = {});

std::string format_ablation_table(const AblationResult& result);

}  // namespace courier::pipeline
