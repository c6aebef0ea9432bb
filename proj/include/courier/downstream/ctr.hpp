#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "courier/downstream/metrics.hpp"
#include "courier/model/mlp.hpp"
#include "courier/quantize/quantize.hpp"
#include "courier/synthgen/synthgen.hpp"
#include "json.hpp"

// Simplified CTR ranker: item-id embedding plus optional image features,
// target attention over the click history, and an MLP head.
namespace courier::downstream {

struct CtrConfig {
  quant::ImageMode mode = quant::ImageMode::none;
  std::size_t d_id = 16;
  std::size_t d_cid = 16;
  // Width of the attention projections.
  std::size_t d_att = 16;
  // Hidden widths; a final width-1 layer is appended (5 layers by default).
  std::vector<std::size_t> mlp = {64, 32, 16, 8};
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::size_t l_click = 5;

  void validate() const;
};

nlohmann::json ctr_config_to_json(const CtrConfig& config);
// Missing keys keep their defaults; bad values are a ConfigError.
CtrConfig ctr_config_from_json(const nlohmann::json& j);

// Image inputs required by the active mode. Non-owning.
struct ImageResources {
  // Exported embedding table (vector and simscore modes).
  const diff::Tensor* embeddings = nullptr;
  // Cluster id per item and the cluster count (clusterid mode).
  const std::vector<std::int64_t>* clusters = nullptr;
  std::size_t num_clusters = 0;
};

// Throws ConfigError when the mode's resource is absent or does not cover
// num_items.
void check_resources(quant::ImageMode mode, const ImageResources& res, std::size_t num_items);

class CtrModel {
 public:
  CtrModel() = default;
  CtrModel(const CtrConfig& config, std::size_t num_items, const ImageResources& res, std::uint64_t seed);

  const CtrConfig& config() const { return config_; }
  std::size_t num_items() const { return id_table_.rows(); }
  std::size_t item_dim() const;
  std::size_t mlp_input_dim() const;

  // Item representation without gradient tracking.
  std::vector<double> item_vector(std::int64_t item, const ImageResources& res) const;

  // Logits for every real page-view slot of `sessions`, in session/slot order.
  diff::Var logits(diff::Tape& tape, std::span<const synth::Session> sessions, const ImageResources& res) const;
  // Click probabilities grouped per session.
  std::vector<ScoredGroup> score(std::span<const synth::Session> sessions, const ImageResources& res) const;
  // Probability for one page-view slot.
  double forward(const synth::Session& session, std::size_t pv_slot, const ImageResources& res) const;

  std::vector<diff::Tensor*> parameters();
  std::size_t parameter_count() const;
  // Parameters whose values depend on image features: the cluster table and
  // the MLP input weights reading image or simscore columns.
  std::size_t image_parameter_count() const;

  // Sets every parameter to zero.
  void zero();

  friend nlohmann::json ctr_model_to_json(const CtrModel& m);
  friend CtrModel ctr_model_from_json(const nlohmann::json& j);

 private:
  CtrConfig config_;
  std::size_t image_dim_ = 0;
  diff::Tensor id_table_;   // [num_items x d_id]
  diff::Tensor cid_table_;  // [k x d_cid], clusterid mode only
  diff::Tensor wq_, wk_, wv_;
  model::Mlp head_;
};

nlohmann::json ctr_model_to_json(const CtrModel& m);
CtrModel ctr_model_from_json(const nlohmann::json& j);

struct CtrTrainLog {
  // Mean BCE per epoch.
  std::vector<double> epoch_loss;
};

// BCE on every real page-view slot with Adam. Deterministic per seed.
CtrTrainLog train_ctr(CtrModel& model, const std::vector<synth::Session>& train, const ImageResources& res,
                      std::uint64_t seed);

}  // namespace courier::downstream
