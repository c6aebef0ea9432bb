#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "courier/diffcore/ops.hpp"
#include "courier/model/mlp.hpp"
#include "courier/synthgen/synthgen.hpp"

// Pre-training objective: reconstruct each page-view item from the user's
// clicks and contrast it against every other item in the batch.
namespace courier::model {

enum class Variant { full, no_ucs, no_contrast, no_reconstruction, no_neg_pv, small_batch };

std::string_view to_string(Variant v);
// Throws ConfigError on unknown names.
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

struct PretrainConfig {
  double tau = 0.05;
  std::size_t d = 32;
  std::vector<std::size_t> hidden = {64};
  std::size_t l_pv = 5;
  std::size_t l_click = 5;
  std::size_t batch_size = 64;
  // Batch size forced by Variant::small_batch.
  std::size_t small_batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  std::size_t epochs = 20;
  Variant variant = Variant::full;
  // Hidden widths of the d -> ... -> d head; nullopt disables it.
  std::optional<std::vector<std::size_t>> projection_head;
  // Items sampled for the uniformity statistic.
  std::size_t uniformity_sample = 512;

  std::size_t effective_batch_size() const;
  // Throws ConfigError on out-of-range values.
  void validate() const;
};

Mlp make_encoder(std::size_t d_in, const PretrainConfig& config, Rng& rng);
// Empty Mlp when the config has no head.
Mlp make_projection_head(const PretrainConfig& config, Rng& rng);

// Flattened session batch. Row b * l_pv + j of `pv` is PV slot j of session
// b; clicks likewise. Masked rows are zero.
struct EmbeddingBatch {
  diff::Var pv;     // [batch*l_pv x d]
  diff::Var click;  // [batch*l_click x d]
  std::size_t batch = 0;
  std::size_t l_pv = 0;
  std::size_t l_click = 0;
  std::vector<std::uint8_t> pv_mask;
  std::vector<std::uint8_t> click_mask;
  std::vector<std::uint8_t> labels;
};

// Sessions shorter than l_pv / l_click are padded; longer ones are a
// DimensionError. Unknown item ids are a DataError.
EmbeddingBatch encode_batch(diff::Tape& tape, const Mlp& encoder, std::span<const synth::Session> sessions,
                            const diff::Tensor& features, std::size_t l_pv, std::size_t l_click);

// Runs `head` over both embedding sets; masked rows stay zero.
EmbeddingBatch apply_projection_head(diff::Tape& tape, const EmbeddingBatch& batch, const Mlp& head);

struct ReconstructionOutput {
  diff::Var rec;       // [M x d]
  diff::Tensor alpha;  // [M x width]
};

// rec[i] = attention of query i over click rows index[i][0..width); entries
// < 0 are masked.
ReconstructionOutput reconstruct(const diff::Var& queries, const diff::Var& clicks,
                                 const std::vector<std::int64_t>& index, std::size_t width);

// Query-free pooling: each group's click rows attend to each other, then the
// outputs are mean-pooled. Returns [groups x d].
diff::Var self_attention_pool(const diff::Var& clicks, const std::vector<std::int64_t>& index,
                              std::size_t width);

// S = normalize(a) normalize(b)^T.
diff::Var similarity_matrix(const diff::Var& a, const diff::Var& b);

struct ContrastiveResult {
  diff::Var loss;
  bool no_positives = false;
};

// Column-wise InfoNCE over S / tau for every positive column, summed and
// divided by `normalizer` (the number of rows of S when 0).
ContrastiveResult pv_contrastive_loss(const diff::Var& s, const std::vector<std::uint8_t>& labels, double tau,
                                      double normalizer = 0.0);

// mean over positives of (1 - S[j][j]).
diff::Var diagonal_reconstruction_loss(const diff::Var& s, const std::vector<std::uint8_t>& labels);

struct UcsOptions {
  bool contrastive = true;
  bool cross_attention = true;
};

// The most recent click of each session is the target; the older clicks are
// its history. Sessions without history are skipped. Needs batch >= 2
// (ContractError) and l_click >= 2 (ConfigError).
diff::Var ucs_loss(const EmbeddingBatch& batch, double tau, UcsOptions options = {});

struct LossBreakdown {
  diff::Var total;
  diff::Var l_pv;
  diff::Var l_ucs;
  // Sum of S[j][j] over positive PV rows and their count.
  double alignment_sum = 0.0;
  std::size_t num_positive = 0;
  bool no_positives = false;
  bool ucs_disabled = false;
};

// `batch` is expected to be already projected when a head is in use.
LossBreakdown courier_loss(diff::Tape& tape, const EmbeddingBatch& batch, const PretrainConfig& config);

}  // namespace courier::model
