#include "courier/downstream/ctr.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "courier/common/codec.hpp"
#include "courier/common/rng.hpp"
#include "courier/diffcore/ops.hpp"
#include "courier/error.hpp"
#include "courier/trainer/adam.hpp"

namespace courier::downstream {

using diff::Tensor;
using diff::Var;
using quant::ImageMode;

namespace {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("config key '{}' has the wrong type", key));
  }
}

Tensor normal_tensor(diff::Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = n(rng);
  return t;
}

// Flattened view of a batch: real page-view slots and real clicks.
struct BatchLayout {
  std::vector<std::int64_t> pv_items;
  std::vector<std::int64_t> pv_session;
  std::vector<std::int64_t> click_items;
  // [pv rows x l_click] rows of click_items per page-view row.
  std::vector<std::int64_t> att_index;
  // [sessions x l_click] rows of click_items per session.
  std::vector<std::int64_t> pool_index;
  std::vector<std::uint8_t> has_history;  // per pv row
  bool any_empty = false;
};

BatchLayout layout(std::span<const synth::Session> sessions, std::size_t l_click, std::size_t num_items) {
  BatchLayout b;
  auto check = [&](std::int64_t id, const synth::Session& s) {
    if (id < 0 || static_cast<std::size_t>(id) >= num_items) {
      throw DataError(fmt::format("unknown item id {} in session {}", id, s.session_id));
    }
  };
  b.pool_index.assign(sessions.size() * l_click, -1);
  for (std::size_t si = 0; si < sessions.size(); ++si) {
    const synth::Session& s = sessions[si];
    if (s.click_history.size() > l_click) {
      throw DimensionError(fmt::format("session {} has {} clicks, limit {}", s.session_id, s.click_history.size(), l_click));
    }
    std::vector<std::int64_t> rows(l_click, -1);
    for (std::size_t l = 0; l < s.click_history.size(); ++l) {
      if (!s.click_mask[l]) continue;
      check(s.click_history[l], s);
      rows[l] = static_cast<std::int64_t>(b.click_items.size());
      b.click_items.push_back(s.click_history[l]);
    }
    std::copy(rows.begin(), rows.end(), b.pool_index.begin() + static_cast<std::ptrdiff_t>(si * l_click));
    const bool has = std::any_of(rows.begin(), rows.end(), [](std::int64_t r) { return r >= 0; });
    for (std::size_t l = 0; l < s.pv_items.size(); ++l) {
      if (!s.pv_mask[l]) continue;
      check(s.pv_items[l], s);
      b.pv_items.push_back(s.pv_items[l]);
      b.pv_session.push_back(static_cast<std::int64_t>(si));
      b.has_history.push_back(has);
      b.any_empty = b.any_empty || !has;
      b.att_index.insert(b.att_index.end(), rows.begin(), rows.end());
    }
  }
  if (b.any_empty) {
    // Rows without history attend to a placeholder key; their output is
    // zeroed afterwards.
    const auto dummy = static_cast<std::int64_t>(b.click_items.size());
    b.click_items.push_back(0);
    for (std::size_t r = 0; r < b.has_history.size(); ++r)
      if (!b.has_history[r]) b.att_index[r * l_click] = dummy;
  }
  return b;
}

std::vector<double> sorted_simscores(std::int64_t target, const synth::Session& s, const Tensor& emb,
                                     std::size_t l_click) {
  std::vector<double> out(l_click, 0.0);
  for (std::size_t l = 0; l < s.click_history.size(); ++l)
    if (s.click_mask[l])
      out[l] = quant::cosine(emb.row(static_cast<std::size_t>(target)), emb.row(static_cast<std::size_t>(s.click_history[l])));
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

}  // namespace

void CtrConfig::validate() const {
  if (d_id == 0 || d_att == 0) throw ConfigError("d_id and d_att must be positive");
  if (mode == ImageMode::clusterid && d_cid == 0) throw ConfigError("d_cid must be positive in clusterid mode");
  if (!(lr > 0.0)) throw ConfigError("ctr lr must be > 0");
  if (weight_decay < 0.0) throw ConfigError("ctr weight_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("ctr batch_size must be positive");
  if (l_click == 0) throw ConfigError("l_click must be positive");
  for (std::size_t w : mlp)
    if (w == 0) throw ConfigError("ctr MLP widths must be positive");
}

nlohmann::json ctr_config_to_json(const CtrConfig& c) {
  return {{"image_mode", quant::to_string(c.mode)}, {"d_id", c.d_id}, {"d_cid", c.d_cid}, {"d_att", c.d_att},
          {"mlp", c.mlp}, {"lr", c.lr}, {"weight_decay", c.weight_decay}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"l_click", c.l_click}};
}

CtrConfig ctr_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("ctr config must be an object");
  CtrConfig c;
  if (j.contains("image_mode")) {
    std::string m;
    read_key(j, "image_mode", m);
    c.mode = quant::parse_image_mode(m);
  }
  read_key(j, "d_id", c.d_id);
  read_key(j, "d_cid", c.d_cid);
  read_key(j, "d_att", c.d_att);
  read_key(j, "mlp", c.mlp);
  read_key(j, "lr", c.lr);
  read_key(j, "weight_decay", c.weight_decay);
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "l_click", c.l_click);
  c.validate();
  return c;
}

void check_resources(ImageMode mode, const ImageResources& res, std::size_t num_items) {
  switch (mode) {
    case ImageMode::none:
      return;
    case ImageMode::vector:
    case ImageMode::simscore:
      if (!res.embeddings) throw ConfigError(fmt::format("image mode {} needs an embedding table", quant::to_string(mode)));
      if (res.embeddings->rows() != num_items) {
        throw ConfigError(fmt::format("embedding table has {} rows for {} items", res.embeddings->rows(), num_items));
      }
      return;
    case ImageMode::clusterid:
      if (!res.clusters || res.num_clusters == 0) throw ConfigError("image mode clusterid needs a cluster map");
      if (res.clusters->size() != num_items) {
        throw ConfigError(fmt::format("cluster map covers {} items, catalog has {}", res.clusters->size(), num_items));
      }
      for (std::int64_t c : *res.clusters)
        if (c < 0 || static_cast<std::size_t>(c) >= res.num_clusters) throw ConfigError("cluster id out of range");
      return;
  }
}

CtrModel::CtrModel(const CtrConfig& config, std::size_t num_items, const ImageResources& res, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  if (num_items == 0) throw ConfigError("CTR model needs a nonempty catalog");
  check_resources(config_.mode, res, num_items);
  if (config_.mode == ImageMode::vector) image_dim_ = res.embeddings->cols();
  if (config_.mode == ImageMode::clusterid) image_dim_ = config_.d_cid;
  Rng rng = make_rng(seed, "ctr_init");
  id_table_ = normal_tensor({num_items, config_.d_id}, 0.1, rng);
  if (config_.mode == ImageMode::clusterid) cid_table_ = normal_tensor({res.num_clusters, config_.d_cid}, 0.1, rng);
  const std::size_t di = item_dim();
  const double s = std::sqrt(1.0 / static_cast<double>(di));
  wq_ = normal_tensor({di, config_.d_att}, s, rng);
  wk_ = normal_tensor({di, config_.d_att}, s, rng);
  wv_ = normal_tensor({di, config_.d_att}, s, rng);
  std::vector<std::size_t> widths{mlp_input_dim()};
  widths.insert(widths.end(), config_.mlp.begin(), config_.mlp.end());
  widths.push_back(1);
  head_ = model::Mlp::init(widths, rng, model::Activation::relu);
}

std::size_t CtrModel::item_dim() const { return config_.d_id + image_dim_; }

std::size_t CtrModel::mlp_input_dim() const {
  return item_dim() + 2 * config_.d_att + (config_.mode == ImageMode::simscore ? config_.l_click : 0);
}

std::vector<double> CtrModel::item_vector(std::int64_t item, const ImageResources& res) const {
  if (item < 0 || static_cast<std::size_t>(item) >= num_items()) throw DataError(fmt::format("unknown item id {}", item));
  check_resources(config_.mode, res, num_items());
  const auto i = static_cast<std::size_t>(item);
  auto id = id_table_.row(i);
  std::vector<double> out(id.begin(), id.end());
  if (config_.mode == ImageMode::vector) {
    auto e = res.embeddings->row(i);
    out.insert(out.end(), e.begin(), e.end());
  } else if (config_.mode == ImageMode::clusterid) {
    auto c = cid_table_.row(static_cast<std::size_t>((*res.clusters)[i]));
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

Var CtrModel::logits(diff::Tape& tape, std::span<const synth::Session> sessions, const ImageResources& res) const {
  check_resources(config_.mode, res, num_items());
  const std::size_t lc = config_.l_click;
  const BatchLayout b = layout(sessions, lc, num_items());
  if (b.pv_items.empty()) throw ContractError("CTR batch has no page-view items");

  auto items = [&](const std::vector<std::int64_t>& ids) {
    Var id = diff::gather_rows(tape.param(id_table_), ids);
    if (config_.mode == ImageMode::vector) {
      Tensor img({ids.size(), image_dim_});
      for (std::size_t r = 0; r < ids.size(); ++r) {
        auto e = res.embeddings->row(static_cast<std::size_t>(ids[r]));
        std::copy(e.begin(), e.end(), img.storage().begin() + static_cast<std::ptrdiff_t>(r * image_dim_));
      }
      return diff::concat({id, tape.constant(std::move(img))}, 1);
    }
    if (config_.mode == ImageMode::clusterid) {
      std::vector<std::int64_t> cids(ids.size());
      for (std::size_t r = 0; r < ids.size(); ++r) cids[r] = (*res.clusters)[static_cast<std::size_t>(ids[r])];
      return diff::concat({id, diff::gather_rows(tape.param(cid_table_), cids)}, 1);
    }
    return id;
  };

  Var pv = items(b.pv_items);
  Var hist = items(b.click_items);
  Var q = diff::matmul(pv, tape.param(wq_));
  Var k = diff::matmul(hist, tape.param(wk_));
  Var v = diff::matmul(hist, tape.param(wv_));
  Var att = diff::gather_attention(q, k, v, b.att_index, lc).out;
  if (b.any_empty) {
    Tensor keep({b.pv_items.size(), config_.d_att});
    for (std::size_t r = 0; r < b.pv_items.size(); ++r)
      if (b.has_history[r]) std::fill_n(keep.storage().begin() + static_cast<std::ptrdiff_t>(r * config_.d_att), config_.d_att, 1.0);
    att = diff::mul(att, tape.constant(std::move(keep)));
  }
  Var pooled = diff::gather_rows(diff::segment_mean(v, b.pool_index, lc), b.pv_session);
  std::vector<Var> parts{pv, att, pooled};
  if (config_.mode == ImageMode::simscore) {
    Tensor sims({b.pv_items.size(), lc});
    for (std::size_t r = 0; r < b.pv_items.size(); ++r) {
      auto row = sorted_simscores(b.pv_items[r], sessions[static_cast<std::size_t>(b.pv_session[r])], *res.embeddings, lc);
      std::copy(row.begin(), row.end(), sims.storage().begin() + static_cast<std::ptrdiff_t>(r * lc));
    }
    parts.push_back(tape.constant(std::move(sims)));
  }
  return head_.forward(tape, diff::concat(parts, 1));
}

std::vector<ScoredGroup> CtrModel::score(std::span<const synth::Session> sessions, const ImageResources& res) const {
  std::vector<ScoredGroup> out;
  constexpr std::size_t kChunk = 256;
  for (std::size_t first = 0; first < sessions.size(); first += kChunk) {
    auto chunk = sessions.subspan(first, std::min(kChunk, sessions.size() - first));
    diff::Tape tape;
    const Tensor z = logits(tape, chunk, res).value();
    std::size_t r = 0;
    for (const synth::Session& s : chunk) {
      ScoredGroup g;
      for (std::size_t l = 0; l < s.pv_items.size(); ++l) {
        if (!s.pv_mask[l]) continue;
        g.scores.push_back(1.0 / (1.0 + std::exp(-z[r++])));
        g.labels.push_back(s.labels[l]);
      }
      out.push_back(std::move(g));
    }
  }
  return out;
}

double CtrModel::forward(const synth::Session& session, std::size_t pv_slot, const ImageResources& res) const {
  if (pv_slot >= session.pv_items.size() || !session.pv_mask[pv_slot]) {
    throw ContractError(fmt::format("page-view slot {} is not a real item", pv_slot));
  }
  std::size_t idx = 0;
  for (std::size_t l = 0; l < pv_slot; ++l) idx += session.pv_mask[l] ? 1 : 0;
  return score(std::span(&session, 1), res)[0].scores[idx];
}

std::vector<Tensor*> CtrModel::parameters() {
  std::vector<Tensor*> out{&id_table_};
  if (cid_table_.size() > 0) out.push_back(&cid_table_);
  out.push_back(&wq_);
  out.push_back(&wk_);
  out.push_back(&wv_);
  for (Tensor* p : head_.parameters()) out.push_back(p);
  return out;
}

std::size_t CtrModel::parameter_count() const {
  return id_table_.size() + cid_table_.size() + wq_.size() + wk_.size() + wv_.size() + head_.parameter_count();
}

std::size_t CtrModel::image_parameter_count() const {
  const std::size_t h1 = head_.empty() ? 0 : head_.layers().front().weight.cols();
  const std::size_t sim_cols = config_.mode == ImageMode::simscore ? config_.l_click : 0;
  return cid_table_.size() + image_dim_ * config_.d_att * 3 + (image_dim_ + sim_cols) * h1;
}

void CtrModel::zero() {
  for (Tensor* p : parameters()) p->fill(0.0);
}

nlohmann::json ctr_model_to_json(const CtrModel& m) {
  return {{"format", "courier-ctr-model"},
          {"version", 1},
          {"config", ctr_config_to_json(m.config_)},
          {"image_dim", m.image_dim_},
          {"id_table", tensor_to_json(m.id_table_)},
          {"cid_table", tensor_to_json(m.cid_table_)},
          {"wq", tensor_to_json(m.wq_)},
          {"wk", tensor_to_json(m.wk_)},
          {"wv", tensor_to_json(m.wv_)},
          {"head", model::mlp_to_json(m.head_)}};
}

CtrModel ctr_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "courier-ctr-model" || j.at("version") != 1) throw DataError("unsupported CTR model format");
    CtrModel m;
    m.config_ = ctr_config_from_json(j.at("config"));
    m.image_dim_ = j.at("image_dim").get<std::size_t>();
    m.id_table_ = tensor_from_json(j.at("id_table"));
    m.cid_table_ = tensor_from_json(j.at("cid_table"));
    m.wq_ = tensor_from_json(j.at("wq"));
    m.wk_ = tensor_from_json(j.at("wk"));
    m.wv_ = tensor_from_json(j.at("wv"));
    m.head_ = model::mlp_from_json(j.at("head"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed CTR model: ") + e.what());
  }
}

CtrTrainLog train_ctr(CtrModel& model, const std::vector<synth::Session>& train, const ImageResources& res,
                      std::uint64_t seed) {
  const CtrConfig& cfg = model.config();
  if (train.empty()) throw ContractError("train_ctr: empty training set");
  Rng rng = make_rng(seed, "ctr_shuffle");
  train::AdamState adam;
  const train::AdamConfig adam_cfg{.lr = cfg.lr, .weight_decay = cfg.weight_decay};
  std::vector<Tensor*> params = model.parameters();
  CtrTrainLog log;
  std::vector<std::size_t> order(train.size());
  std::vector<synth::Session> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = first; i < std::min(order.size(), first + cfg.batch_size); ++i) batch.push_back(train[order[i]]);
      std::vector<double> targets;
      for (const auto& s : batch)
        for (std::size_t l = 0; l < s.pv_items.size(); ++l)
          if (s.pv_mask[l]) targets.push_back(s.labels[l]);
      diff::Tape tape;
      Var loss = diff::bce_with_logits(model.logits(tape, batch, res), targets);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError(fmt::format("CTR loss is {} at epoch {}, batch {}", value, epoch, batches));
      }
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (Tensor* p : params) grads.push_back(tape.grad_of(*p));
      train::adam_step(params, grads, adam, adam_cfg);
      loss_sum += value;
      ++batches;
    }
    log.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return log;
}

}  // namespace courier::downstream
