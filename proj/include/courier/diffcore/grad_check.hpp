#pragma once

#include <functional>
#include <vector>

#include "courier/diffcore/tape.hpp"
#include "courier/diffcore/tensor.hpp"

namespace courier::diff {

// Builds a scalar loss on the given tape. Parameters are read through
// Tape::param so that perturbations made by grad_check are observed.
using ScalarFn = std::function<Var(Tape&)>;

// Compares reverse-mode gradients against central finite differences for
// every entry of every parameter and returns
//   max |analytic - numeric| / max(1, |numeric|).
// Parameters are perturbed in place and restored before returning.
double grad_check(const ScalarFn& f, const std::vector<Tensor*>& params, double eps = 1e-5);

}  // namespace courier::diff
