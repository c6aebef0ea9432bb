#include "courier/model/mlp.hpp"

#include <cmath>
#include <string>

#include "courier/common/codec.hpp"
#include "courier/diffcore/ops.hpp"
#include "courier/error.hpp"

namespace courier::model {

using diff::Tensor;
using diff::Var;

Mlp::Mlp(std::vector<Linear> layers, Activation activation)
    : layers_(std::move(layers)), activation_(activation) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Linear& l = layers_[i];
    if (l.weight.rank() != 2 || l.bias.size() != l.weight.cols()) {
      throw DimensionError("layer " + std::to_string(i) + " weight/bias shapes disagree");
    }
    if (i > 0 && layers_[i - 1].weight.cols() != l.weight.rows()) {
      throw DimensionError("layer " + std::to_string(i) + " input width does not match previous output");
    }
  }
}

Mlp Mlp::init(const std::vector<std::size_t>& widths, Rng& rng, Activation activation) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  std::vector<Linear> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i];
    const std::size_t out = widths[i + 1];
    if (in == 0 || out == 0) throw ConfigError("MLP widths must be positive");
    const double gain = activation == Activation::relu ? 2.0 : 1.0;
    std::normal_distribution<double> normal(0.0, std::sqrt(gain / static_cast<double>(in)));
    Linear l{Tensor({in, out}), Tensor({out})};
    for (double& w : l.weight.storage()) w = normal(rng);
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers), activation);
}

Mlp Mlp::identity(std::size_t dim) { return Mlp({Linear{Tensor::identity(dim), Tensor({dim})}}); }

Var Mlp::forward(diff::Tape& tape, const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = diff::add_row(diff::matmul(h, tape.param(layers_[i].weight)), tape.param(layers_[i].bias));
    if (i + 1 < layers_.size()) h = activation_ == Activation::relu ? diff::relu(h) : diff::tanh(h);
  }
  return h;
}

Tensor Mlp::apply(const Tensor& x) const {
  diff::Tape tape;
  return forward(tape, tape.constant(x)).value();
}

std::size_t Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().weight.rows(); }
std::size_t Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().weight.cols(); }

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (Linear& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Linear& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

nlohmann::json mlp_to_json(const Mlp& mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : mlp.layers()) layers.push_back({{"weight", tensor_to_json(l.weight)}, {"bias", tensor_to_json(l.bias)}});
  return {{"activation", mlp.activation() == Activation::relu ? "relu" : "tanh"}, {"layers", layers}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  std::vector<Linear> layers;
  for (const nlohmann::json& l : j.at("layers")) layers.push_back({tensor_from_json(l.at("weight")), tensor_from_json(l.at("bias"))});
  return Mlp(std::move(layers), j.at("activation") == "relu" ? Activation::relu : Activation::tanh);
}

}  // namespace courier::model
