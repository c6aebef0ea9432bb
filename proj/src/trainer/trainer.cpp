#include "courier/trainer/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "courier/common/codec.hpp"
#include "courier/error.hpp"

namespace courier::train {

using diff::Tensor;
using model::Mlp;
using model::PretrainConfig;
using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

json tensors_to_json(const std::vector<Tensor>& ts) {
  json out = json::array();
  for (const Tensor& t : ts) out.push_back(tensor_to_json(t));
  return out;
}

std::vector<Tensor> tensors_from_json(const json& j) {
  std::vector<Tensor> out;
  for (const json& t : j) out.push_back(tensor_from_json(t));
  return out;
}

std::vector<std::size_t> uniformity_items(const Checkpoint& ck, std::size_t num_items) {
  std::vector<std::size_t> ids(num_items);
  std::iota(ids.begin(), ids.end(), 0);
  const std::size_t n = std::min(ck.config.uniformity_sample, num_items);
  Rng rng = make_rng(ck.seed, "uniformity");
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("config key '{}' has the wrong type", key));
  }
}

}  // namespace

json pretrain_config_to_json(const PretrainConfig& c) {
  json j{{"tau", c.tau},
         {"d", c.d},
         {"hidden", c.hidden},
         {"l_pv", c.l_pv},
         {"l_click", c.l_click},
         {"batch_size", c.batch_size},
         {"small_batch_size", c.small_batch_size},
         {"lr", c.lr},
         {"weight_decay", c.weight_decay},
         {"epochs", c.epochs},
         {"variant", model::to_string(c.variant)},
         {"uniformity_sample", c.uniformity_sample}};
  j["projection_head"] = c.projection_head ? json(*c.projection_head) : json(nullptr);
  return j;
}

PretrainConfig pretrain_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("pretrain config must be an object");
  PretrainConfig c;
  read_key(j, "tau", c.tau);
  read_key(j, "d", c.d);
  read_key(j, "hidden", c.hidden);
  read_key(j, "l_pv", c.l_pv);
  read_key(j, "l_click", c.l_click);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "small_batch_size", c.small_batch_size);
  read_key(j, "lr", c.lr);
  read_key(j, "weight_decay", c.weight_decay);
  read_key(j, "epochs", c.epochs);
  read_key(j, "uniformity_sample", c.uniformity_sample);
  if (j.contains("variant")) {
    std::string v;
    read_key(j, "variant", v);
    c.variant = model::parse_variant(v);
  }
  if (j.contains("projection_head") && !j.at("projection_head").is_null()) {
    std::vector<std::size_t> head;
    read_key(j, "projection_head", head);
    c.projection_head = head;
  }
  c.validate();
  return c;
}

Checkpoint init_checkpoint(std::size_t d_in, const PretrainConfig& config, std::uint64_t seed) {
  config.validate();
  Checkpoint ck;
  ck.config = config;
  ck.seed = seed;
  Rng enc_rng = make_rng(seed, "encoder");
  ck.encoder = model::make_encoder(d_in, config, enc_rng);
  Rng head_rng = make_rng(seed, "projection_head");
  ck.head = model::make_projection_head(config, head_rng);
  std::ostringstream os;
  os << make_rng(seed, "shuffle");
  ck.shuffle_state = os.str();
  return ck;
}

double mean_pairwise_cosine(const Tensor& rows) {
  const std::size_t n = rows.rows();
  if (n < 2) throw ContractError("mean_pairwise_cosine: needs at least 2 rows");
  const std::size_t d = rows.cols();
  std::vector<double> unit(rows.storage().begin(), rows.storage().end());
  for (std::size_t i = 0; i < n; ++i) {
    double* r = unit.data() + i * d;
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += r[k] * r[k];
    norm = std::max(std::sqrt(norm), diff::kNormEpsilon);
    for (std::size_t k = 0; k < d; ++k) r[k] /= norm;
  }
  // sum_{i<j} <u_i, u_j> = (|sum u|^2 - sum |u_i|^2) / 2
  std::vector<double> total(d, 0.0);
  double self = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      total[k] += unit[i * d + k];
      self += unit[i * d + k] * unit[i * d + k];
    }
  double sq = 0.0;
  for (double t : total) sq += t * t;
  return (sq - self) / static_cast<double>(n * (n - 1));
}

void train_epochs(Checkpoint& ck, const synth::Catalog& catalog, const std::vector<synth::Session>& train,
                  TrainLog& log) {
  const PretrainConfig& cfg = ck.config;
  cfg.validate();
  if (train.empty()) throw ContractError("pretrain: empty training set");
  const Tensor features = catalog.feature_matrix();
  if (features.cols() != ck.encoder.in_dim()) {
    throw DimensionError(fmt::format("pretrain: catalog feature width {} does not match encoder input {}",
                                     features.cols(), ck.encoder.in_dim()));
  }
  const std::size_t bs = cfg.effective_batch_size();
  const AdamConfig adam{.lr = cfg.lr, .weight_decay = cfg.weight_decay};
  const std::vector<std::size_t> sample = uniformity_items(ck, catalog.items.size());
  Tensor sample_features({sample.size(), features.cols()});
  for (std::size_t i = 0; i < sample.size(); ++i)
    std::copy_n(features.row(sample[i]).begin(), features.cols(), sample_features.storage().begin() + static_cast<std::ptrdiff_t>(i * features.cols()));

  Rng shuffle;
  {
    std::istringstream is(ck.shuffle_state);
    is >> shuffle;
    if (!is) throw DataError("checkpoint shuffle state is unreadable");
  }
  std::vector<Tensor*> params = ck.encoder.parameters();
  for (Tensor* p : ck.head.parameters()) params.push_back(p);

  while (ck.epochs_done < cfg.epochs) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle);
    double loss_sum = 0.0, pv_sum = 0.0, ucs_sum = 0.0, align_sum = 0.0;
    std::size_t batches = 0, positives = 0;
    std::vector<synth::Session> batch;
    for (std::size_t first = 0; first < order.size(); first += bs) {
      const std::size_t count = std::min(bs, order.size() - first);
      if (count < 2) break;
      batch.clear();
      for (std::size_t i = 0; i < count; ++i) batch.push_back(train[order[first + i]]);
      diff::Tape tape;
      model::LossBreakdown lb;
      try {
        model::EmbeddingBatch emb = model::encode_batch(tape, ck.encoder, batch, features, cfg.l_pv, cfg.l_click);
        emb = model::apply_projection_head(tape, emb, ck.head);
        lb = model::courier_loss(tape, emb, cfg);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("non-finite value at step {}, batch {} of epoch {}: {}", ck.adam.step + 1,
                                       batches, ck.epochs_done, e.what()));
      }
      const double total = lb.total.value().item();
      if (!std::isfinite(total)) {
        throw NumericError(fmt::format("loss is {} at step {}, batch {} of epoch {}", total, ck.adam.step + 1,
                                       batches, ck.epochs_done));
      }
      tape.backward(lb.total);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (Tensor* p : params) grads.push_back(tape.grad_of(*p));
      adam_step(params, grads, ck.adam, adam);
      loss_sum += total;
      pv_sum += lb.l_pv.value().item();
      ucs_sum += lb.l_ucs.value().item();
      align_sum += lb.alignment_sum;
      positives += lb.num_positive;
      ++batches;
    }
    if (batches == 0) throw ContractError("pretrain: fewer than 2 sessions, no batch can be formed");
    ++ck.epochs_done;
    std::ostringstream os;
    os << shuffle;
    ck.shuffle_state = os.str();

    EpochRecord rec;
    rec.epoch = ck.epochs_done;
    rec.loss = loss_sum / static_cast<double>(batches);
    rec.l_pv = pv_sum / static_cast<double>(batches);
    rec.l_ucs = ucs_sum / static_cast<double>(batches);
    rec.alignment = positives ? align_sum / static_cast<double>(positives) : 0.0;
    rec.uniformity = sample.size() >= 2 ? mean_pairwise_cosine(ck.encoder.apply(sample_features)) : 0.0;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(rec);
  }
}

PretrainResult pretrain(const synth::Catalog& catalog, const std::vector<synth::Session>& train,
                        const PretrainConfig& config, std::uint64_t seed) {
  PretrainResult out{init_checkpoint(catalog.space.feature_dim, config, seed), {}};
  train_epochs(out.checkpoint, catalog, train, out.log);
  return out;
}

Tensor export_embeddings(const Checkpoint& ck, const synth::Catalog& catalog) {
  return ck.encoder.apply(catalog.feature_matrix());
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  json j{{"format", "courier-checkpoint"},
         {"version", kCheckpointVersion},
         {"config", pretrain_config_to_json(ck.config)},
         {"seed", ck.seed},
         {"encoder", model::mlp_to_json(ck.encoder)},
         {"head", model::mlp_to_json(ck.head)},
         {"adam", {{"step", ck.adam.step}, {"m", tensors_to_json(ck.adam.m)}, {"v", tensors_to_json(ck.adam.v)}}},
         {"epochs_done", ck.epochs_done},
         {"shuffle_state", ck.shuffle_state}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  try {
    const json j = json::parse(in);
    if (j.at("format") != "courier-checkpoint" || j.at("version") != kCheckpointVersion) {
      throw DataError("unsupported checkpoint format in " + path.string());
    }
    Checkpoint ck;
    ck.config = pretrain_config_from_json(j.at("config"));
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.encoder = model::mlp_from_json(j.at("encoder"));
    ck.head = model::mlp_from_json(j.at("head"));
    ck.adam.step = j.at("adam").at("step").get<std::uint64_t>();
    ck.adam.m = tensors_from_json(j.at("adam").at("m"));
    ck.adam.v = tensors_from_json(j.at("adam").at("v"));
    ck.epochs_done = j.at("epochs_done").get<std::size_t>();
    ck.shuffle_state = j.at("shuffle_state").get<std::string>();
    return ck;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

void write_embeddings_tsv(const Tensor& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  std::string line;
  for (std::size_t i = 0; i < table.rows(); ++i) {
    line = fmt::format("{}", i);
    for (double v : table.row(i)) fmt::format_to(std::back_inserter(line), "\t{:.17g}", v);
    line.push_back('\n');
    out << line;
  }
}

Tensor read_embeddings_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("embedding table not found: " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t id = 0;
    if (!(ls >> id) || id != rows) throw DataError(fmt::format("{}:{}: expected item id {}", path.string(), rows + 1, rows));
    std::size_t n = 0;
    double v = 0.0;
    while (ls >> v) {
      values.push_back(v);
      ++n;
    }
    if (!ls.eof()) throw DataError(fmt::format("{}:{}: unparseable value", path.string(), rows + 1));
    if (rows == 0) cols = n;
    if (n != cols || n == 0) throw DataError(fmt::format("{}:{}: expected {} values, got {}", path.string(), rows + 1, cols, n));
    ++rows;
  }
  if (rows == 0) throw DataError("empty embedding table " + path.string());
  return Tensor({rows, cols}, std::move(values));
}

void write_train_log(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch\tloss\tl_pv\tl_ucs\talignment\tuniformity\n";
  for (const EpochRecord& r : log.epochs) {
    out << fmt::format("{}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\n", r.epoch, r.loss, r.l_pv, r.l_ucs,
                       r.alignment, r.uniformity);
  }
}

TrainLog read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("train log not found: " + path.string());
  TrainLog log;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    EpochRecord r;
    if (!(row >> r.epoch >> r.loss >> r.l_pv >> r.l_ucs >> r.alignment >> r.uniformity)) {
      throw DataError("malformed train log line in " + path.string());
    }
    log.epochs.push_back(r);
  }
  return log;
}

}  // namespace courier::train
