#include <cmath>
#include <memory>
#include <string>

#include "courier/diffcore/ops.hpp"
#include "courier/error.hpp"

namespace courier::diff {

AttentionResult scaled_dot_attention(const Var& q, const Var& k, const Var& v,
                                     const std::vector<std::uint8_t>& key_mask) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2) {
    throw DimensionError("scaled_dot_attention: q, k, v must be matrices");
  }
  if (qv.cols() != kv.cols()) {
    throw DimensionError("scaled_dot_attention: query " + shape_string(qv.shape()) + " and key " +
                         shape_string(kv.shape()) + " widths differ");
  }
  if (kv.rows() != vv.rows()) {
    throw DimensionError("scaled_dot_attention: " + std::to_string(kv.rows()) + " keys but " +
                         std::to_string(vv.rows()) + " values");
  }
  const std::size_t nq = qv.rows();
  const std::size_t nk = kv.rows();
  if (key_mask.size() != nk) {
    throw DimensionError("scaled_dot_attention: mask length " + std::to_string(key_mask.size()) +
                         " vs " + std::to_string(nk) + " keys");
  }
  bool any = false;
  for (auto m : key_mask) any = any || m;
  if (!any) throw DegenerateInputError("scaled_dot_attention: every key is masked");

  Tape& tape = *q.tape();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  Var scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
  Tensor bias({nq, nk});
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < nk; ++j)
      if (!key_mask[j]) bias.at(i, j) = kMaskedScore;
  Var weights = softmax(add(scores, tape.constant(std::move(bias))), 1);
  Var out = matmul(weights, v);
  return {out, weights.value()};
}

AttentionResult gather_attention(const Var& queries, const Var& keys, const Var& values,
                                 const std::vector<std::int64_t>& index, std::size_t width) {
  const Tensor& qv = queries.value();
  const Tensor& kv = keys.value();
  const Tensor& vv = values.value();
  if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2) {
    throw DimensionError("gather_attention: queries, keys, values must be matrices");
  }
  const std::size_t m = qv.rows();
  const std::size_t d = qv.cols();
  const std::size_t dv = vv.cols();
  if (kv.cols() != d) {
    throw DimensionError("gather_attention: query " + shape_string(qv.shape()) + " and key " +
                         shape_string(kv.shape()) + " widths differ");
  }
  if (kv.rows() != vv.rows()) throw DimensionError("gather_attention: keys and values row counts differ");
  if (index.size() != m * width) {
    throw DimensionError("gather_attention: index has " + std::to_string(index.size()) +
                         " entries, expected " + std::to_string(m) + "x" + std::to_string(width));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  auto weights = std::make_shared<Tensor>(Shape{m, width});
  Tensor out({m, dv});
  std::vector<double> scores(width);
  for (std::size_t i = 0; i < m; ++i) {
    const double* q = qv.storage().data() + i * d;
    double mx = -INFINITY;
    bool any = false;
    for (std::size_t l = 0; l < width; ++l) {
      const std::int64_t r = index[i * width + l];
      if (r < 0) continue;
      if (static_cast<std::size_t>(r) >= kv.rows()) throw DimensionError("gather_attention: key index out of range");
      const double* key = kv.storage().data() + static_cast<std::size_t>(r) * d;
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += q[j] * key[j];
      scores[l] = s * inv_sqrt_d;
      mx = std::max(mx, scores[l]);
      any = true;
    }
    if (!any) {
      throw DegenerateInputError("gather_attention: every key is masked for query row " + std::to_string(i));
    }
    if (!std::isfinite(mx)) throw NumericError("gather_attention: non-finite attention score");
    double z = 0.0;
    for (std::size_t l = 0; l < width; ++l) {
      if (index[i * width + l] < 0) continue;
      scores[l] = std::exp(scores[l] - mx);
      z += scores[l];
    }
    double* o = out.storage().data() + i * dv;
    for (std::size_t l = 0; l < width; ++l) {
      const std::int64_t r = index[i * width + l];
      if (r < 0) continue;
      const double w = scores[l] / z;
      weights->at(i, l) = w;
      const double* val = vv.storage().data() + static_cast<std::size_t>(r) * dv;
      for (std::size_t j = 0; j < dv; ++j) o[j] += w * val[j];
    }
  }
  Tensor returned = *weights;
  Var result = queries.tape()->record(
      std::move(out), {queries, keys, values},
      [&qv, &kv, &vv, weights, index, width, m, d, dv, inv_sqrt_d](
          const Tensor&, const Tensor& g, std::span<Tensor* const> grads) {
        std::vector<double> dw(width);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gi = g.storage().data() + i * dv;
          double wdw = 0.0;
          for (std::size_t l = 0; l < width; ++l) {
            const std::int64_t r = index[i * width + l];
            dw[l] = 0.0;
            if (r < 0) continue;
            const double w = weights->at(i, l);
            const double* val = vv.storage().data() + static_cast<std::size_t>(r) * dv;
            double acc = 0.0;
            for (std::size_t j = 0; j < dv; ++j) acc += gi[j] * val[j];
            dw[l] = acc;
            wdw += w * acc;
            if (grads[2]) {
              double* dval = grads[2]->storage().data() + static_cast<std::size_t>(r) * dv;
              for (std::size_t j = 0; j < dv; ++j) dval[j] += w * gi[j];
            }
          }
          const double* q = qv.storage().data() + i * d;
          for (std::size_t l = 0; l < width; ++l) {
            const std::int64_t r = index[i * width + l];
            if (r < 0) continue;
            const double ds = weights->at(i, l) * (dw[l] - wdw) * inv_sqrt_d;
            if (ds == 0.0) continue;
            const double* key = kv.storage().data() + static_cast<std::size_t>(r) * d;
            if (grads[0]) {
              double* dq = grads[0]->storage().data() + i * d;
              for (std::size_t j = 0; j < d; ++j) dq[j] += ds * key[j];
            }
            if (grads[1]) {
              double* dk = grads[1]->storage().data() + static_cast<std::size_t>(r) * d;
              for (std::size_t j = 0; j < d; ++j) dk[j] += ds * q[j];
            }
          }
        }
      });
  return {result, std::move(returned)};
}

}  // namespace courier::diff
