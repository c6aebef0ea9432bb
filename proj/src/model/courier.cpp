#include "courier/model/courier.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "courier/error.hpp"

namespace courier::model {

using diff::Tensor;
using diff::Var;

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 6> kVariantNames{{
    {Variant::full, "full"},
    {Variant::no_ucs, "no_ucs"},
    {Variant::no_contrast, "no_contrast"},
    {Variant::no_reconstruction, "no_reconstruction"},
    {Variant::no_neg_pv, "no_neg_pv"},
    {Variant::small_batch, "small_batch"},
}};

// Encodes one list of slots into [batch*len x d] and zeroes padded rows.
Var encode_slots(diff::Tape& tape, const Mlp& encoder, std::span<const synth::Session> sessions,
                 const Tensor& features, std::size_t len, bool pv, std::vector<std::uint8_t>& mask_out) {
  const std::size_t d_in = features.cols();
  const std::size_t rows = sessions.size() * len;
  Tensor x({rows, d_in});
  mask_out.assign(rows, 0);
  for (std::size_t b = 0; b < sessions.size(); ++b) {
    const synth::Session& s = sessions[b];
    const auto& ids = pv ? s.pv_items : s.click_history;
    const auto& mask = pv ? s.pv_mask : s.click_mask;
    if (ids.size() > len || mask.size() != ids.size()) {
      throw DimensionError("encode_batch: session " + std::to_string(s.session_id) + " has " +
                           std::to_string(ids.size()) + (pv ? " page-view" : " click") + " slots, limit " +
                           std::to_string(len));
    }
    for (std::size_t l = 0; l < ids.size(); ++l) {
      if (!mask[l]) continue;
      const std::int64_t id = ids[l];
      if (id < 0 || static_cast<std::size_t>(id) >= features.rows()) {
        throw DataError("encode_batch: unknown item id " + std::to_string(id) + " in session " +
                        std::to_string(s.session_id));
      }
      const std::size_t r = b * len + l;
      mask_out[r] = 1;
      std::copy_n(features.storage().begin() + static_cast<std::ptrdiff_t>(id) * d_in, d_in,
                  x.storage().begin() + static_cast<std::ptrdiff_t>(r) * d_in);
    }
  }
  Var out = encoder.forward(tape, tape.constant(std::move(x)));
  return diff::mul(out, tape.constant([&] {
    Tensor m({rows, out.value().cols()});
    for (std::size_t r = 0; r < rows; ++r)
      if (mask_out[r]) std::fill_n(m.storage().begin() + static_cast<std::ptrdiff_t>(r * m.cols()), m.cols(), 1.0);
    return m;
  }()));
}

Var zero_rows_by_mask(diff::Tape& tape, const Var& x, const std::vector<std::uint8_t>& mask) {
  Tensor m(x.value().shape());
  const std::size_t c = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r)
    if (mask[r]) std::fill_n(m.storage().begin() + static_cast<std::ptrdiff_t>(r * c), c, 1.0);
  return diff::mul(x, tape.constant(std::move(m)));
}

Tensor diagonal_selector(const std::vector<std::uint8_t>& labels) {
  Tensor dsel({labels.size(), labels.size()});
  for (std::size_t j = 0; j < labels.size(); ++j)
    if (labels[j]) dsel.at(j, j) = 1.0;
  return dsel;
}

}  // namespace

std::string_view to_string(Variant v) {
  for (const auto& [variant, name] : kVariantNames)
    if (variant == v) return name;
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (const auto& [variant, n] : kVariantNames)
    if (n == name) return variant;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = [] {
    std::vector<Variant> out;
    for (const auto& entry : kVariantNames) out.push_back(entry.first);
    return out;
  }();
  return v;
}

std::size_t PretrainConfig::effective_batch_size() const {
  return variant == Variant::small_batch ? small_batch_size : batch_size;
}

void PretrainConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (d == 0) throw ConfigError("embedding size d must be positive");
  if (batch_size < 2 || small_batch_size < 2) throw ConfigError("batch_size must be >= 2 for contrastive terms");
  if (l_pv == 0 || l_click == 0) throw ConfigError("l_pv and l_click must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("hidden widths must be positive");
}

Mlp make_encoder(std::size_t d_in, const PretrainConfig& config, Rng& rng) {
  std::vector<std::size_t> widths{d_in};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(config.d);
  return Mlp::init(widths, rng, Activation::tanh);
}

Mlp make_projection_head(const PretrainConfig& config, Rng& rng) {
  if (!config.projection_head) return Mlp();
  std::vector<std::size_t> widths{config.d};
  widths.insert(widths.end(), config.projection_head->begin(), config.projection_head->end());
  widths.push_back(config.d);
  return Mlp::init(widths, rng, Activation::tanh);
}

EmbeddingBatch encode_batch(diff::Tape& tape, const Mlp& encoder, std::span<const synth::Session> sessions,
                            const Tensor& features, std::size_t l_pv, std::size_t l_click) {
  if (features.rank() != 2 || features.cols() != encoder.in_dim()) {
    throw DimensionError("encode_batch: feature matrix " + diff::shape_string(features.shape()) +
                         " does not match encoder input width " + std::to_string(encoder.in_dim()));
  }
  EmbeddingBatch out;
  out.batch = sessions.size();
  out.l_pv = l_pv;
  out.l_click = l_click;
  out.pv = encode_slots(tape, encoder, sessions, features, l_pv, true, out.pv_mask);
  out.click = encode_slots(tape, encoder, sessions, features, l_click, false, out.click_mask);
  out.labels.assign(out.batch * l_pv, 0);
  for (std::size_t b = 0; b < sessions.size(); ++b) {
    const auto& labels = sessions[b].labels;
    if (labels.size() != sessions[b].pv_items.size()) {
      throw DimensionError("encode_batch: labels and page-view lists differ in length");
    }
    for (std::size_t l = 0; l < labels.size(); ++l) out.labels[b * l_pv + l] = labels[l] && out.pv_mask[b * l_pv + l];
  }
  return out;
}

EmbeddingBatch apply_projection_head(diff::Tape& tape, const EmbeddingBatch& batch, const Mlp& head) {
  if (head.empty()) return batch;
  EmbeddingBatch out = batch;
  out.pv = zero_rows_by_mask(tape, head.forward(tape, batch.pv), batch.pv_mask);
  out.click = zero_rows_by_mask(tape, head.forward(tape, batch.click), batch.click_mask);
  return out;
}

ReconstructionOutput reconstruct(const Var& queries, const Var& clicks, const std::vector<std::int64_t>& index,
                                 std::size_t width) {
  auto [rec, alpha] = diff::gather_attention(queries, clicks, clicks, index, width);
  return {rec, std::move(alpha)};
}

Var self_attention_pool(const Var& clicks, const std::vector<std::int64_t>& index, std::size_t width) {
  if (width == 0 || index.size() % width != 0) throw DimensionError("self_attention_pool: bad index width");
  const std::size_t groups = index.size() / width;
  // Every slot of a group queries the group's keys; padded slots borrow a
  // real row and are then left out of the pooling.
  std::vector<std::int64_t> query_rows(groups * width);
  std::vector<std::int64_t> key_index(groups * width * width);
  std::vector<std::int64_t> pool_index(groups * width, -1);
  for (std::size_t g = 0; g < groups; ++g) {
    std::int64_t first = -1;
    for (std::size_t l = 0; l < width && first < 0; ++l) first = index[g * width + l];
    if (first < 0) {
      throw DegenerateInputError("self_attention_pool: group " + std::to_string(g) + " has no click items");
    }
    for (std::size_t l = 0; l < width; ++l) {
      const std::int64_t r = index[g * width + l];
      query_rows[g * width + l] = r >= 0 ? r : first;
      if (r >= 0) pool_index[g * width + l] = static_cast<std::int64_t>(g * width + l);
      std::copy_n(index.begin() + static_cast<std::ptrdiff_t>(g * width), width,
                  key_index.begin() + static_cast<std::ptrdiff_t>((g * width + l) * width));
    }
  }
  Var q = diff::gather_rows(clicks, query_rows);
  Var attended = diff::gather_attention(q, clicks, clicks, key_index, width).out;
  return diff::segment_mean(attended, pool_index, width);
}

Var similarity_matrix(const Var& a, const Var& b) {
  return diff::matmul(diff::l2_normalize(a, 1), diff::transpose(diff::l2_normalize(b, 1)));
}

ContrastiveResult pv_contrastive_loss(const Var& s, const std::vector<std::uint8_t>& labels, double tau,
                                      double normalizer) {
  const Tensor& sv = s.value();
  if (sv.rank() != 2 || sv.rows() != sv.cols()) {
    throw DimensionError("pv_contrastive_loss: S must be square, got " + diff::shape_string(sv.shape()));
  }
  const std::size_t m = sv.rows();
  if (labels.size() != m) throw DimensionError("pv_contrastive_loss: labels length differs from S");
  if (m < 2) throw ContractError("pv_contrastive_loss: needs at least 2 rows, got " + std::to_string(m));
  if (!(tau > 0.0)) throw ConfigError("pv_contrastive_loss: tau must be > 0");
  if (normalizer == 0.0) normalizer = static_cast<double>(m);
  diff::Tape& tape = *s.tape();
  const bool any = std::any_of(labels.begin(), labels.end(), [](std::uint8_t y) { return y != 0; });
  if (!any) return {tape.constant(Tensor::scalar(0.0)), true};
  Var logprob = diff::log_softmax(diff::scale(s, 1.0 / tau), 0);
  Var picked = diff::sum(diff::mul(logprob, tape.constant(diagonal_selector(labels))));
  return {diff::scale(picked, -1.0 / normalizer), false};
}

Var diagonal_reconstruction_loss(const Var& s, const std::vector<std::uint8_t>& labels) {
  const std::size_t n = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto y) { return y != 0; }));
  diff::Tape& tape = *s.tape();
  if (n == 0) return tape.constant(Tensor::scalar(0.0));
  Var diag = diff::sum(diff::mul(s, tape.constant(diagonal_selector(labels))));
  return diff::add_scalar(diff::scale(diag, -1.0 / static_cast<double>(n)), 1.0);
}

Var ucs_loss(const EmbeddingBatch& batch, double tau, UcsOptions options) {
  if (batch.l_click < 2) throw ConfigError("ucs_loss: l_click must be >= 2, got " + std::to_string(batch.l_click));
  if (batch.batch < 2) throw ContractError("ucs_loss: batch must be >= 2, got " + std::to_string(batch.batch));
  const std::size_t lc = batch.l_click;
  const std::size_t width = lc - 1;
  std::vector<std::int64_t> targets;
  std::vector<std::int64_t> index;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    if (!batch.click_mask[b * lc]) continue;
    bool has_history = false;
    for (std::size_t l = 1; l < lc; ++l) has_history = has_history || batch.click_mask[b * lc + l];
    if (!has_history) continue;
    targets.push_back(static_cast<std::int64_t>(b * lc));
    for (std::size_t l = 1; l < lc; ++l)
      index.push_back(batch.click_mask[b * lc + l] ? static_cast<std::int64_t>(b * lc + l) : -1);
  }
  diff::Tape& tape = *batch.click.tape();
  if (targets.size() < 2) return tape.constant(Tensor::scalar(0.0));
  Var target = diff::gather_rows(batch.click, targets);
  Var rec = options.cross_attention ? reconstruct(target, batch.click, index, width).rec
                                    : self_attention_pool(batch.click, index, width);
  Var s = similarity_matrix(target, rec);
  std::vector<std::uint8_t> labels(targets.size(), 1);
  if (!options.contrastive) return diagonal_reconstruction_loss(s, labels);
  return pv_contrastive_loss(s, labels, tau).loss;
}

LossBreakdown courier_loss(diff::Tape& tape, const EmbeddingBatch& batch, const PretrainConfig& config) {
  const Variant v = config.variant;
  const std::size_t lp = batch.l_pv;
  const std::size_t lc = batch.l_click;
  LossBreakdown out;

  std::vector<std::int64_t> rows;
  std::vector<std::uint8_t> labels;
  std::vector<std::int64_t> index;
  std::vector<std::int64_t> session_of;
  for (std::size_t r = 0; r < batch.batch * lp; ++r) {
    if (!batch.pv_mask[r]) continue;
    if (v == Variant::no_neg_pv && !batch.labels[r]) continue;
    const std::size_t b = r / lp;
    rows.push_back(static_cast<std::int64_t>(r));
    labels.push_back(batch.labels[r]);
    session_of.push_back(static_cast<std::int64_t>(b));
    for (std::size_t l = 0; l < lc; ++l)
      index.push_back(batch.click_mask[b * lc + l] ? static_cast<std::int64_t>(b * lc + l) : -1);
  }

  if (rows.empty()) {
    out.l_pv = tape.constant(Tensor::scalar(0.0));
    out.no_positives = true;
  } else {
    Var q = diff::gather_rows(batch.pv, rows);
    Var rec;
    if (v == Variant::no_reconstruction) {
      std::vector<std::int64_t> groups(batch.batch * lc);
      for (std::size_t r = 0; r < groups.size(); ++r) groups[r] = batch.click_mask[r] ? static_cast<std::int64_t>(r) : -1;
      rec = diff::gather_rows(self_attention_pool(batch.click, groups, lc), session_of);
    } else {
      rec = reconstruct(q, batch.click, index, lc).rec;
    }
    Var s = similarity_matrix(q, rec);
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (!labels[j]) continue;
      out.alignment_sum += s.value().at(j, j);
      ++out.num_positive;
    }
    if (v == Variant::no_contrast) {
      out.l_pv = diagonal_reconstruction_loss(s, labels);
      out.no_positives = out.num_positive == 0;
    } else if (rows.size() < 2) {
      throw ContractError("courier_loss: fewer than 2 usable page-view rows in batch");
    } else {
      auto res = pv_contrastive_loss(s, labels, config.tau, static_cast<double>(batch.batch * lp));
      out.l_pv = res.loss;
      out.no_positives = res.no_positives;
    }
  }

  if (v == Variant::no_ucs) {
    out.l_ucs = tape.constant(Tensor::scalar(0.0));
  } else if (lc < 2) {
    out.l_ucs = tape.constant(Tensor::scalar(0.0));
    out.ucs_disabled = true;
  } else {
    out.l_ucs = ucs_loss(batch, config.tau,
                         {.contrastive = v != Variant::no_contrast, .cross_attention = v != Variant::no_reconstruction});
  }
  out.total = diff::add(out.l_pv, out.l_ucs);
  return out;
}

}  // namespace courier::model
