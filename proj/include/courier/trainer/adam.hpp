#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "courier/diffcore/tensor.hpp"

namespace courier::train {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Classic L2 form: weight_decay * theta is added to the gradient.
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<diff::Tensor> m;
  std::vector<diff::Tensor> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Moments are allocated on the first call. Shape mismatches between params,
// grads and existing moments are a ContractError.
void adam_step(std::span<diff::Tensor* const> params, std::span<const diff::Tensor> grads, AdamState& state,
               const AdamConfig& config);

}  // namespace courier::train
