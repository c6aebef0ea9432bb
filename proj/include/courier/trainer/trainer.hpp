#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "courier/model/courier.hpp"
#include "courier/trainer/adam.hpp"
#include "json.hpp"

namespace courier::train {

nlohmann::json pretrain_config_to_json(const model::PretrainConfig& config);
// Missing keys keep their defaults; wrong types are a ConfigError.
model::PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

struct Checkpoint {
  model::PretrainConfig config;
  std::uint64_t seed = 0;
  model::Mlp encoder;
  // Empty unless config.projection_head is set.
  model::Mlp head;
  AdamState adam;
  std::size_t epochs_done = 0;
  // Serialized std::mt19937_64 driving the per-epoch shuffles.
  std::string shuffle_state;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double l_pv = 0.0;
  double l_ucs = 0.0;
  // Mean Sim(j, j) over positive page-view rows.
  double alignment = 0.0;
  // Mean pairwise cosine over a fixed item sample.
  double uniformity = 0.0;
  // Not part of equality: it is the only non-deterministic field.
  double wall_seconds = 0.0;

  bool operator==(const EpochRecord& o) const {
    return epoch == o.epoch && loss == o.loss && l_pv == o.l_pv && l_ucs == o.l_ucs && alignment == o.alignment &&
           uniformity == o.uniformity;
  }
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  bool operator==(const TrainLog&) const = default;
};

Checkpoint init_checkpoint(std::size_t d_in, const model::PretrainConfig& config, std::uint64_t seed);

// Runs epochs until checkpoint.epochs_done == checkpoint.config.epochs,
// appending one record per epoch. Shuffles every epoch and drops a final
// batch smaller than 2. A non-finite loss raises NumericError naming the
// step and batch.
void train_epochs(Checkpoint& checkpoint, const synth::Catalog& catalog, const std::vector<synth::Session>& train,
                  TrainLog& log);

struct PretrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

PretrainResult pretrain(const synth::Catalog& catalog, const std::vector<synth::Session>& train,
                        const model::PretrainConfig& config, std::uint64_t seed);

// Mean cosine over all distinct row pairs.
double mean_pairwise_cosine(const diff::Tensor& rows);

// Encoder output (pre-head) for every catalog item, row i = item i.
diff::Tensor export_embeddings(const Checkpoint& checkpoint, const synth::Catalog& catalog);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// TSV, one line per item: item_id then d values printed with 17 significant
// digits.
void write_embeddings_tsv(const diff::Tensor& table, const std::filesystem::path& path);
diff::Tensor read_embeddings_tsv(const std::filesystem::path& path);

void write_train_log(const TrainLog& log, const std::filesystem::path& path);
// Inverse of write_train_log; wall times read back as 0.
TrainLog read_train_log(const std::filesystem::path& path);

}  // namespace courier::train
