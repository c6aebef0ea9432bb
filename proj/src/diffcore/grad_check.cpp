#include "courier/diffcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace courier::diff {

double grad_check(const ScalarFn& f, const std::vector<Tensor*>& params, double eps) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
    for (const Tensor* p : params) analytic.push_back(tape.grad_of(*p));
  }
  auto evaluate = [&f]() {
    Tape tape;
    return f(tape).value().item();
  };
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& param = *params[p];
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param[i];
      param[i] = saved + eps;
      const double up = evaluate();
      param[i] = saved - eps;
      const double down = evaluate();
      param[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[p][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace courier::diff
