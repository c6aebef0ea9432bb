#include "courier/trainer/adam.hpp"

#include <cmath>
#include <string>

#include "courier/error.hpp"

namespace courier::train {

void adam_step(std::span<diff::Tensor* const> params, std::span<const diff::Tensor> grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size()) throw ContractError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const diff::Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state tracks a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape()) {
      throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i) + ", " +
                          diff::shape_string(params[i]->shape()) + " vs gradient " +
                          diff::shape_string(grads[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k] + config.weight_decay * p[k];
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * gk * gk;
      p[k] -= config.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.eps);
    }
  }
}

}  // namespace courier::train
