#pragma once

#include <cstddef>
#include <vector>

#include "courier/common/rng.hpp"
#include "courier/diffcore/tape.hpp"
#include "courier/diffcore/tensor.hpp"
#include "json.hpp"

namespace courier::model {

enum class Activation { relu, tanh };

struct Linear {
  diff::Tensor weight;  // [in x out]
  diff::Tensor bias;    // [out]
};

// Feed-forward stack with an activation between layers and a linear output
// layer.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Linear> layers, Activation activation = Activation::relu);

  // widths = {in, hidden..., out}. Zero biases; weights are He-normal for
  // relu and Xavier-normal for tanh.
  static Mlp init(const std::vector<std::size_t>& widths, Rng& rng, Activation activation = Activation::relu);
  // Single bias-free layer with identity weights.
  static Mlp identity(std::size_t dim);

  diff::Var forward(diff::Tape& tape, const diff::Var& x) const;
  // Forward pass outside any training tape.
  diff::Tensor apply(const diff::Tensor& x) const;

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  bool empty() const { return layers_.empty(); }
  Activation activation() const { return activation_; }
  const std::vector<Linear>& layers() const { return layers_; }
  std::vector<diff::Tensor*> parameters();
  std::size_t parameter_count() const;

 private:
  std::vector<Linear> layers_;
  Activation activation_ = Activation::relu;
};

// {"activation": .., "layers": [{"weight": .., "bias": ..}, ..]}
nlohmann::json mlp_to_json(const Mlp& mlp);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace courier::model
